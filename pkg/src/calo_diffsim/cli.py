#!/usr/bin/env python3
"""
calo-diffsim command line.

Wires the pipeline generate -> smear -> train -> sample -> voxelize -> evaluate
and writes a run manifest beside every output.
"""

import argparse
import hashlib
import sys
import time
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from . import __version__
from .checkpoint import CHECKPOINT_MAGIC, CHECKPOINT_SUFFIX, read_checkpoint_header, save_checkpoint
from .config import ToolConfig, load_config, load_section, render_config
from .container import FORMAT_VERSION, DatasetReader, read_dataset, read_header, write_dataset
from .discovery import load_bundle
from .errors import CaloSimError, ContractError, DivergenceError, MissingInputError
from .models import ArtifactRecord, DatasetFormat, ModelKind, RunManifest
from .networks import build_network
from .pipelines import (
    generate_image_events,
    generate_pointcloud_events,
    prepare_training,
    sample_incidents,
)
from .report import GeneratedSet, build_report, encoded_size, write_report
from .representation import validate_event, voxelize
from .schedule import DiffusionSchedule
from .showergen import build_dataset, map_events, smear_events
from .trainer import train

MANIFEST_SUFFIX = ".manifest.json"


def file_record(path: Path) -> ArtifactRecord:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return ArtifactRecord(path=str(path), sha256=digest.hexdigest(), size_bytes=path.stat().st_size)


def manifest_path(output: Path) -> Path:
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + MANIFEST_SUFFIX)


def read_manifest(output: Path) -> Optional[RunManifest]:
    path = manifest_path(output)
    if not path.exists():
        return None
    try:
        return RunManifest.model_validate_json(path.read_text())
    except ValueError as e:
        logger.warning(f"Ignoring unreadable manifest {path}: {e}")
        return None


def _require_file(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"file not found: {path}")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calo-diffsim",
        description="Desk-scale diffusion fast simulation of hadronic calorimeter showers",
    )
    parser.add_argument("--version", action="version",
                        version=f"calo-diffsim {__version__} (dataset format {FORMAT_VERSION})")
    parser.add_argument("--config", type=Path, help="Sectioned key = value config file")
    parser.add_argument("--print-config", action="store_true",
                        help="Print the effective configuration and exit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("generate", help="Generate toy showers as a point-cloud dataset")
    p.add_argument("--n", type=int, required=True, help="Number of events")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1, help="Event-parallel worker processes")
    p.add_argument("--shower-params", type=Path, help="Shower model parameter file")

    p = sub.add_parser("smear", help="Smear discrete hits uniformly within their cells")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1, help="Event-parallel worker processes")

    p = sub.add_parser("train", help="Train one diffusion model")
    p.add_argument("--model", choices=[k.value for k in ModelKind], required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hyper", type=Path, help="Config file whose [train] section overrides")
    p.add_argument("--steps", type=int, help="Override the number of optimizer steps")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help=f"Checkpoint path ({CHECKPOINT_SUFFIX})")

    p = sub.add_parser("sample", help="Generate events with a trained pipeline")
    p.add_argument("--model-dir", type=Path, required=True)
    p.add_argument("--representation", choices=["pointcloud", "image"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cond-from", type=Path,
                   help="Take incident particles from this point-cloud dataset")

    p = sub.add_parser("voxelize", help="Convert a point-cloud dataset to images")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--full", action="store_true", help="Full-granularity 55^3 images")
    p.add_argument("--workers", type=int, default=1, help="Event-parallel worker processes")

    p = sub.add_parser("evaluate", help="Compare generated samples with a reference")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--gen", type=Path, required=True)
    p.add_argument("--gen2", type=Path)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--no-full-size", action="store_true",
                   help="Skip measuring the full-granularity image size of the reference")

    p = sub.add_parser("inspect", help="Describe a dataset or checkpoint file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--validate", action="store_true", help="Check every event's invariants")

    for p in sub.choices.values():
        p.add_argument("--geometry", type=Path,
                       help="Geometry file (key = value); overrides [geometry] of --config")
    return parser


def effective_config(args: argparse.Namespace) -> ToolConfig:
    """--config, then the per-command --geometry and --shower-params files over it."""
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "geometry", None) is not None:
        updates["geometry"] = load_section(args.geometry, "geometry", cfg.geometry)
    if getattr(args, "shower_params", None) is not None:
        updates["shower"] = load_section(args.shower_params, "shower", cfg.shower)
    return cfg.model_copy(update=updates) if updates else cfg


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level, format="{time:HH:mm:ss} | {level: <8} | {message}")


class CaloDiffSimApp:
    """One command-line invocation: configuration, handlers and manifests."""

    def __init__(self, args: argparse.Namespace, argv: List[str], cfg: Optional[ToolConfig] = None):
        self.args = args
        self.argv = argv
        self.cfg = cfg or effective_config(args)
        self.geometry = self.cfg.geometry
        self.handlers = {
            "generate": self.handle_generate,
            "smear": self.handle_smear,
            "train": self.handle_train,
            "sample": self.handle_sample,
            "voxelize": self.handle_voxelize,
            "evaluate": self.handle_evaluate,
            "inspect": self.handle_inspect,
        }

    def new_manifest(self, **kwargs) -> RunManifest:
        return RunManifest(
            command=self.args.command,
            argv=self.argv,
            tool_version=__version__,
            format_version=FORMAT_VERSION,
            config_hashes=self.cfg.config_hashes(),
            **kwargs,
        )

    def write_manifest(self, manifest: RunManifest, output: Path) -> Path:
        path = manifest_path(output)
        path.write_text(manifest.model_dump_json(indent=2) + "\n")
        logger.debug(f"Wrote manifest {path}")
        return path

    def handle_generate(self) -> None:
        args = self.args
        if args.n < 1:
            raise ContractError("--n must be at least 1")
        start = time.perf_counter()
        out = build_dataset(self.geometry, self.cfg.shower, args.n, args.seed, args.out,
                            workers=args.workers)
        elapsed = time.perf_counter() - start
        self.write_manifest(self.new_manifest(
            seeds={"generate": args.seed},
            outputs=[file_record(out)],
            wall_times={"generate": elapsed},
            metadata={"n_events": float(args.n)},
        ), out)
        logger.info(f"✅ Wrote {args.n} events to {out} in {elapsed:.1f}s")

    def handle_smear(self) -> None:
        args = self.args
        source = _require_file(args.input)
        events = read_dataset(source, self.geometry, DatasetFormat.POINTCLOUD)
        smeared = smear_events(self.geometry, events, args.seed, workers=args.workers)
        out = write_dataset(smeared, args.out, DatasetFormat.POINTCLOUD, self.geometry)
        self.write_manifest(self.new_manifest(
            seeds={"smear": args.seed},
            inputs=[file_record(source)],
            outputs=[file_record(out)],
            metadata={"n_events": float(len(smeared))},
        ), out)
        logger.info(f"✅ Smeared {len(smeared)} events into {out}")

    def handle_train(self) -> None:
        args = self.args
        source = _require_file(args.data)
        hyper = load_config(args.hyper).train if args.hyper else self.cfg.train
        if args.steps is not None:
            hyper = hyper.model_copy(update={"steps": args.steps})
        kind = ModelKind(args.model)
        g = self.geometry
        out = Path(args.out)

        items = read_dataset(source, g)
        data, normalization = prepare_training(kind, g, items, args.seed)
        logger.info(f"🏋️ Training {kind.value} model on {len(data)} items for {hyper.steps} steps")

        def checkpoint(step: int, model) -> None:
            save_checkpoint(out.with_name(f"{out.stem}.step{step}"), kind, model, g,
                            normalization, hyper)

        start = time.perf_counter()
        try:
            result = train(data, kind, hyper, g, args.seed, checkpoint_fn=checkpoint)
        except DivergenceError as e:
            if e.last_good_state is not None:
                model = build_network(kind, hyper, g)
                model.load_state_dict(e.last_good_state)
                saved = save_checkpoint(out.with_name(f"{out.stem}.lastgood"), kind, model, g,
                                        normalization, hyper)
                logger.error(f"Training diverged at step {e.step}; last good weights in {saved}")
            raise
        elapsed = time.perf_counter() - start
        saved = save_checkpoint(out, kind, result.model, g, normalization, hyper)

        metadata = {"n_parameters": float(result.n_parameters), "n_items": float(len(data))}
        if result.log:
            metadata["final_loss"] = result.log[-1].loss
            if result.log[-1].holdout_loss is not None:
                metadata["final_holdout_loss"] = result.log[-1].holdout_loss
        manifest = self.new_manifest(
            seeds={"train": args.seed},
            inputs=[file_record(source)],
            outputs=[file_record(saved)],
            wall_times={"train": elapsed},
            metadata=metadata,
        )
        manifest.config_hashes["train"] = hyper.config_hash()
        self.write_manifest(manifest, saved)
        logger.info(f"✅ Saved {kind.value} model ({result.n_parameters:,} parameters) to {saved}")

    def handle_sample(self) -> None:
        args = self.args
        if args.n < 1:
            raise ContractError("--n must be at least 1")
        g = self.geometry
        bundle = load_bundle(args.model_dir, g, args.representation)
        inputs = []
        if args.cond_from:
            source = _require_file(args.cond_from)
            reader = DatasetReader(source, g)
            incidents = [item.incident for item in reader][: args.n]
            if len(incidents) < args.n:
                raise ContractError(f"{source} holds only {len(incidents)} events, --n is {args.n}")
            inputs.append(file_record(source))
        else:
            incidents = sample_incidents(args.n, args.seed)

        sched = DiffusionSchedule(n_steps=self.cfg.sampling.n_steps)
        batch = self.cfg.sampling.batch_size
        start = time.perf_counter()
        if bundle.representation == "pointcloud":
            items, gen_log = generate_pointcloud_events(bundle, incidents, args.seed, sched, batch)
            fmt = DatasetFormat.POINTCLOUD
        else:
            items, gen_log = generate_image_events(bundle, incidents, args.seed, sched, batch)
            fmt = DatasetFormat.IMAGE_11
        elapsed = time.perf_counter() - start
        out = write_dataset(items, args.out, fmt, g)

        self.write_manifest(self.new_manifest(
            seeds={"sample": args.seed},
            inputs=inputs,
            outputs=[file_record(out)],
            wall_times={"sample": elapsed},
            metadata={
                "n_events": float(args.n),
                "n_parameters": float(bundle.n_parameters),
                "sample_seconds_per_1k": 1000.0 * elapsed / args.n,
                **gen_log.as_metadata(),
            },
        ), out)
        logger.info(f"✅ Sampled {args.n} {bundle.representation} events into {out} in {elapsed:.1f}s")

    def handle_voxelize(self) -> None:
        args = self.args
        source = _require_file(args.input)
        g = self.geometry
        events = read_dataset(source, g, DatasetFormat.POINTCLOUD)
        fmt = DatasetFormat.IMAGE_FULL if args.full else DatasetFormat.IMAGE_11
        group = 1 if args.full else g.voxel_group
        if args.workers > 1:
            images = map_events(partial(voxelize, g, group=group), events, args.workers)
        else:
            # stream; full-granularity grids are large
            images = (voxelize(g, e, group) for e in events)
        out = write_dataset(images, args.out, fmt, g)
        self.write_manifest(self.new_manifest(
            inputs=[file_record(source)],
            outputs=[file_record(out)],
            metadata={"n_events": float(len(events))},
        ), out)
        logger.info(f"✅ Voxelized {len(events)} events into {out} ({fmt.value})")

    def _generated_set(self, path: Path, taken: Dict[str, int]) -> GeneratedSet:
        path = _require_file(path)
        g = self.geometry
        header = read_header(path)
        items = read_dataset(path, g)
        representation = "pointcloud" if header.format is DatasetFormat.POINTCLOUD else "image"
        name = representation if representation not in taken else f"{representation}{taken[representation] + 1}"
        taken[representation] = taken.get(representation, 0) + 1

        manifest = read_manifest(path)
        meta = manifest.metadata if manifest is not None else {}
        n_parameters = meta.get("n_parameters")
        gen = GeneratedSet(
            name=name,
            representation=representation,
            n_parameters=None if n_parameters is None else int(n_parameters),
            disk_size_bytes=path.stat().st_size,
            sample_seconds_per_1k=meta.get("sample_seconds_per_1k"),
        )
        if representation == "pointcloud":
            gen.events = items
        else:
            gen.images = items
        return gen

    def handle_evaluate(self) -> None:
        args = self.args
        g = self.geometry
        ref_path = _require_file(args.ref)
        reference = read_dataset(ref_path, g, DatasetFormat.POINTCLOUD)
        taken: Dict[str, int] = {}
        generated = [self._generated_set(args.gen, taken)]
        if args.gen2:
            generated.append(self._generated_set(args.gen2, taken))

        full_size = None
        if not args.no_full_size:
            logger.info("📏 Measuring full-granularity image size of the reference")
            full_size = encoded_size((voxelize(g, e, 1) for e in reference),
                                     DatasetFormat.IMAGE_FULL, g)

        start = time.perf_counter()
        report = build_report(g, reference, generated, self.cfg.evaluation, self.cfg.classifier,
                              args.seed, reference_disk_size_bytes=ref_path.stat().st_size,
                              reference_disk_size_full_bytes=full_size)
        written = write_report(report, args.out)
        elapsed = time.perf_counter() - start
        inputs = [file_record(ref_path)] + [file_record(Path(p)) for p in (args.gen, args.gen2) if p]
        self.write_manifest(self.new_manifest(
            seeds={"evaluate": args.seed},
            inputs=inputs,
            outputs=[file_record(p) for _, p in sorted(written.items())],
            wall_times={"evaluate": elapsed},
        ), Path(args.out))
        logger.info(f"✅ Report written to {written['table']}")

    def handle_inspect(self) -> None:
        args = self.args
        path = _require_file(args.input)
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
        if magic == CHECKPOINT_MAGIC:
            header = read_checkpoint_header(path)
            print(f"checkpoint   {path}")
            print(f"model        {header['kind']}")
            print(f"parameters   {header['n_parameters']:,}")
            print(f"geometry     {header['geometry_hash'][:16]}")
            return

        reader = DatasetReader(path, self.geometry)
        print(f"dataset      {path}")
        print(f"format       {reader.format.value} (version {reader.header.version})")
        print(f"events       {len(reader)} in {reader.header.n_chunks} chunks")
        print(f"size         {path.stat().st_size} bytes")
        items = list(reader)
        if reader.format is DatasetFormat.POINTCLOUD and items:
            hits = np.array([e.n_hits for e in items])
            smeared = sum(e.is_smeared for e in items)
            print(f"hits/event   mean {hits.mean():.2f}  min {hits.min()}  max {hits.max()}")
            print(f"smeared      {smeared}/{len(items)}")
        if args.validate:
            if reader.format is not DatasetFormat.POINTCLOUD:
                raise ContractError("--validate applies to point-cloud datasets")
            bad = 0
            for i, event in enumerate(items):
                try:
                    validate_event(self.geometry, event)
                except ContractError as e:
                    bad += 1
                    logger.warning(f"event {i}: {e}")
            print(f"invalid      {bad}")
            if bad:
                raise ContractError(f"{bad} events violate point-cloud invariants")

    def run(self) -> None:
        self.handlers[self.args.command]()


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose, args.quiet)

    try:
        cfg = effective_config(args)
        if args.print_config:
            sys.stdout.write(render_config(cfg))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            logger.error("a command is required")
            return 2
        CaloDiffSimApp(args, argv, cfg).run()
        return 0
    except (CaloSimError, OSError) as e:
        logger.error(f"❌ {e}")
        return 1


def main():
    """Main entry point for the calo-diffsim command."""
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
