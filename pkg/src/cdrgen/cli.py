"""Command-line workflows tying the package together.

Five subcommands cover the whole loop: ``prepare`` turns a manifest of
PDB files into serialized complex instances, ``train`` fits the
denoiser from a JSON run config, ``sample`` and ``optimize`` generate
designs from a checkpoint, and ``eval`` scores design files against
references. Every command is also exposed as a plain function
(cmd_prepare and friends) so tests and notebooks can skip the argv
layer.

Outputs are deterministic for a fixed config and seed: no timestamps
are written, JSON keys are sorted, and the random streams live inside
the checkpoint. Failures print a single JSON object to stderr and exit
nonzero. Set CDRGEN_LOG_LEVEL (DEBUG, INFO, WARNING, ERROR) to change
log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .estimator import CdrDesigner
from .evaluation import EvaluationError, MetricReport, MetricRow, aar, rmsd_ca
from .structure import (
    ComplexInstance,
    build_instance,
    parse_pdb,
    replace_cdr,
    write_pdb,
)

LOGGER = logging.getLogger("cdrgen")
LOG_LEVEL_VAR = "CDRGEN_LOG_LEVEL"

DESIGN_FORMAT = "cdrgen.design.v1"
PREPARED_INDEX = "prepared.json"


class CommandError(RuntimeError):
    """A workflow failure with an optional machine-readable payload."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


def _setup_logging() -> None:
    name = os.environ.get(LOG_LEVEL_VAR, "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CommandError(f"{path} is not valid JSON: {err}") from err


# -- prepare -------------------------------------------------------------------


def load_manifest(path) -> list[dict]:
    """Read a dataset manifest: a JSON list of complex entries."""
    manifest_path = Path(path)
    if not manifest_path.exists():
        raise CommandError(f"manifest {manifest_path} does not exist")
    entries = _read_json(manifest_path)
    if not isinstance(entries, list) or not entries:
        raise CommandError("manifest must be a non-empty JSON list")
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise CommandError(f"manifest entry {k} is not an object")
        for key in ("id", "path", "cdr"):
            if key not in entry:
                raise CommandError(f"manifest entry {k} lacks {key!r}")
    return entries


def cmd_prepare(manifest, out_dir) -> dict:
    """Parse every manifest entry into a serialized ComplexInstance.

    Entries that fail to parse are recorded with their reason while the
    rest are still processed. The returned summary is also written to
    ``prepared.json`` in the output directory; train and sample configs
    point their manifest field at that index file.
    """
    manifest_path = Path(manifest)
    entries = load_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    prepared = []
    failures = []
    for entry in entries:
        complex_id = str(entry["id"])
        pdb_path = Path(entry["path"])
        if not pdb_path.is_absolute():
            pdb_path = manifest_path.parent / pdb_path
        try:
            text = pdb_path.read_text(encoding="utf-8")
            result = parse_pdb(text)
            instance = build_instance(
                result,
                complex_id=complex_id,
                heavy_chain=entry.get("heavy"),
                light_chain=entry.get("light"),
                antigen_chains=list(entry.get("antigen") or []),
                cdr_tag=str(entry["cdr"]),
            )
        except (OSError, ValueError) as err:
            LOGGER.warning("skipping %s: %s", complex_id, err)
            failures.append({"id": complex_id, "reason": str(err)})
            continue
        instance_name = f"{complex_id}.instance.json"
        instance.save(out / instance_name)
        prepared.append({
            "id": complex_id,
            "path": instance_name,
            "cdr": instance.cdr_tag,
            "split": entry.get("split", "train"),
        })
        LOGGER.info("prepared %s (%d residues)", complex_id,
                    len(instance.residues))

    summary = {"instances": prepared, "failures": failures}
    _write_json(out / PREPARED_INDEX, summary)
    return summary


def _load_prepared(index_path, split: str) -> list[ComplexInstance]:
    """Load instances listed in a prepare index, filtered by split."""
    path = Path(index_path)
    if not path.exists():
        raise CommandError(f"prepared index {path} does not exist")
    doc = _read_json(path)
    entries = doc.get("instances", [])
    if split != "all":
        chosen = [e for e in entries if e.get("split") == split]
        if not chosen and split == "train" and entries:
            chosen = entries  # unlabeled corpora still train on everything
        entries = chosen
    if not entries:
        raise CommandError(f"no instances with split {split!r} in {path}")
    instances = []
    for entry in entries:
        instance_path = path.parent / entry["path"]
        instances.append(ComplexInstance.load(instance_path))
    return instances


# -- train ---------------------------------------------------------------------


def _designer_from_config(config: RunConfig) -> CdrDesigner:
    features = config.model.features
    return CdrDesigner(
        residue_width=features.residue_width,
        pair_width=features.pair_width,
        atom_width=features.atom_width,
        type_embed_width=features.type_embed_width,
        time_embed_width=features.time_embed_width,
        k_neighbors=features.k_neighbors,
        atom_cutoff=features.atom_cutoff,
        atom_rbf_count=features.atom_rbf_count,
        pair_rbf_count=features.pair_rbf_count,
        vismp_blocks=config.model.vismp_blocks,
        ipa_blocks=config.model.ipa_blocks,
        ipa_heads=config.model.ipa_heads,
        ipa_channel=config.model.ipa_channel,
        ipa_points=config.model.ipa_points,
        pos_blocks=config.model.pos_blocks,
        pos_readout=config.model.pos_readout,
        total_steps=config.model.total_steps,
        schedule=config.schedule,
        learning_rate=config.optimizer.learning_rate,
        train_steps=config.optimizer.train_steps,
        t_batch=config.optimizer.t_batch,
        lr_final_fraction=config.optimizer.lr_final_fraction,
        adam_beta1=config.optimizer.beta1,
        adam_beta2=config.optimizer.beta2,
        adam_eps=config.optimizer.eps,
        seed=config.seed,
    )


def _first_mismatch(expected, stored, prefix: str = "") -> str | None:
    """Name of the first differing parameter between two config trees."""
    if isinstance(expected, dict) and isinstance(stored, dict):
        for key in expected:
            inner = f"{prefix}.{key}" if prefix else str(key)
            if key not in stored:
                return inner
            found = _first_mismatch(expected[key], stored[key], inner)
            if found is not None:
                return found
        for key in stored:
            if key not in expected:
                return f"{prefix}.{key}" if prefix else str(key)
        return None
    if expected != stored:
        return prefix or "<root>"
    return None


def _check_checkpoint_config(config: RunConfig, meta: dict,
                             checkpoint) -> None:
    expected = {
        "model": config.model.to_dict(),
        "schedule": config.schedule.to_dict(),
    }
    stored = {
        "model": meta.get("model_config", {}),
        "schedule": meta.get("schedule_config", {}),
    }
    name = _first_mismatch(expected, stored)
    if name is not None:
        raise ConfigError(
            f"checkpoint {checkpoint} does not match the config: first "
            f"mismatching parameter is {name}"
        )


def cmd_train(config: RunConfig, resume=None) -> dict:
    """Fit the denoiser and leave config, loss log, checkpoints on disk.

    The loss log gains one CSV row per optimizer step. Periodic
    checkpoints land every ``checkpoint_every`` steps and the final one
    is tagged ``checkpoint_final.ckpt``. With ``resume`` the designer
    state (weights, optimizer moments, random streams) is restored from
    an earlier checkpoint and training continues up to the configured
    step count, reproducing the uninterrupted run exactly.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.json")
    instances = _load_prepared(config.manifest, split="train")

    if resume is not None:
        from .autodiff import load_checkpoint

        resume_path = Path(resume)
        if not resume_path.exists():
            raise CommandError(f"resume checkpoint {resume_path} not found")
        _, meta = load_checkpoint(resume_path)
        _check_checkpoint_config(config, meta, resume_path)
        designer = CdrDesigner.load(resume_path)
        done = designer.steps_trained_
        remaining = config.optimizer.train_steps - done
        if remaining <= 0:
            raise CommandError(
                f"checkpoint already has {done} steps, config asks for "
                f"{config.optimizer.train_steps}"
            )
        designer.set_params(warm_start=True, train_steps=remaining)
        LOGGER.info("resuming at step %d, %d steps remain", done, remaining)
    else:
        designer = _designer_from_config(config)

    checkpoints: list[str] = []
    loss_csv = out / "loss.csv"
    with open(loss_csv, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["step", "L_type", "L_pos", "L_ori", "total"])

        def on_step(step: int, loss) -> None:
            writer.writerow([step, repr(float(loss.type_loss)),
                             repr(float(loss.pos_loss)),
                             repr(float(loss.ori_loss)),
                             repr(float(loss.total))])
            if step % config.checkpoint_every == 0:
                name = f"checkpoint_step_{step:06d}.ckpt"
                designer.save(out / name)
                checkpoints.append(name)
                LOGGER.info("step %d checkpointed", step)

        try:
            designer.fit(instances, step_callback=on_step)
        except FloatingPointError as err:
            details = getattr(err, "details", {})
            _write_json(out / "diagnostic.json", details)
            raise CommandError(
                f"training aborted: {err} (diagnostic.json written)",
                details,
            ) from err

    # The final artifact records the full recipe, so a resumed run saves
    # exactly the bytes the uninterrupted run would have saved.
    designer.set_params(warm_start=False,
                        train_steps=config.optimizer.train_steps)
    final = "checkpoint_final.ckpt"
    designer.save(out / final)
    checkpoints.append(final)
    return {
        "out_dir": str(out),
        "steps": designer.steps_trained_,
        "loss_csv": loss_csv.name,
        "checkpoints": checkpoints,
        "final_checkpoint": final,
    }


# -- sample / optimize -----------------------------------------------------------


def _resolve_config(config_path, checkpoint) -> RunConfig:
    if config_path is None:
        config_path = Path(checkpoint).parent / "config.json"
        if not config_path.exists():
            raise CommandError(
                "no config.json found next to the checkpoint; pass --config"
            )
    return RunConfig.load(config_path)


def _load_designer(config: RunConfig, checkpoint) -> CdrDesigner:
    from .autodiff import load_checkpoint

    checkpoint_path = Path(checkpoint)
    if not checkpoint_path.exists():
        raise CommandError(f"checkpoint {checkpoint_path} does not exist")
    _, meta = load_checkpoint(checkpoint_path)
    _check_checkpoint_config(config, meta, checkpoint_path)
    return CdrDesigner.load(checkpoint_path)


def _write_design(base: Path, instance: ComplexInstance, design,
                  index: int) -> MetricRow:
    """Write one design as JSON plus PDB and score it against the native."""
    design_id = f"{instance.complex_id}/design_{index:03d}"
    doc = {
        "format": DESIGN_FORMAT,
        "design_id": design_id,
        "complex_id": instance.complex_id,
        "cdr_tag": instance.cdr_tag,
        "sequence": design.sequence,
        "types": [int(v) for v in design.types],
        "ca": [[float(x) for x in row] for row in design.ca],
        "frames": [[[float(x) for x in row] for row in frame]
                   for frame in design.frames],
        "confidence": [float(v) for v in design.confidence],
    }
    stem = base / f"design_{index:03d}"
    _write_json(stem.with_suffix(".json"), doc)
    rebuilt = replace_cdr(instance, design.types, design.ca, design.frames)
    stem.with_suffix(".pdb").write_text(
        write_pdb(rebuilt.to_pdb_records()), encoding="utf-8"
    )
    native_ca = instance.ca_array()[instance.cdr_indices]
    return MetricRow(
        design_id=design_id,
        cdr_tag=instance.cdr_tag,
        aar=aar(instance.cdr_sequence(), design.sequence),
        rmsd=rmsd_ca(native_ca, design.ca),
    )


def _generate(config: RunConfig, checkpoint, count: int, out_dir,
              split: str, runner) -> dict:
    if count < 1:
        raise CommandError("count must be at least 1")
    config.validate()
    designer = _load_designer(config, checkpoint)
    instances = _load_prepared(config.manifest, split=split)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for instance in instances:
        base = out / instance.complex_id
        base.mkdir(parents=True, exist_ok=True)
        for index, design in enumerate(runner(designer, instance)):
            rows.append(_write_design(base, instance, design, index))
        LOGGER.info("%s: %d designs", instance.complex_id, count)

    report = MetricReport(rows=rows)
    report.write_csv(out / "metrics.csv")
    return {
        "out_dir": str(out),
        "complexes": len(instances),
        "designs": len(rows),
        "mean_aar": report.mean_aar,
        "mean_rmsd": report.mean_rmsd,
        "metrics_csv": "metrics.csv",
    }


def cmd_sample(config: RunConfig, checkpoint, count: int,
               out_dir=None, split: str = "all") -> dict:
    """Draw designs from the prior for every prepared complex."""
    if out_dir is None:
        out_dir = Path(checkpoint).parent / "samples"

    def runner(designer: CdrDesigner, instance: ComplexInstance):
        return designer.sample(instance, count=count)

    return _generate(config, checkpoint, count, out_dir, split, runner)


def cmd_optimize(config: RunConfig, checkpoint, t: int, count: int,
                 out_dir=None, split: str = "all") -> dict:
    """Perturb each native CDR t steps and denoise it back."""
    if out_dir is None:
        out_dir = Path(checkpoint).parent / f"optimized_t{t}"

    def runner(designer: CdrDesigner, instance: ComplexInstance):
        results = designer.optimize(instance, t=t, count=count)
        return [r.design for r in results]

    return _generate(config, checkpoint, count, out_dir, split, runner)


# -- eval ----------------------------------------------------------------------


def _reference_arrays(doc: dict, path: Path) -> tuple[str, str, np.ndarray]:
    """CDR tag, sequence, and Cα array from a design or instance file."""
    if "residues" in doc:
        instance = ComplexInstance.from_json(json.dumps(doc))
        native_ca = instance.ca_array()[instance.cdr_indices]
        return instance.cdr_tag, instance.cdr_sequence(), native_ca
    if "sequence" in doc and "ca" in doc:
        ca = np.asarray(doc["ca"], dtype=np.float64)
        return str(doc.get("cdr_tag", "?")), str(doc["sequence"]), ca
    raise CommandError(f"{path} is neither a design nor an instance file")


def _find_reference(references: Path, relative: Path,
                    complex_id: str) -> Path | None:
    candidates = [
        references / relative,
        references / f"{complex_id}.instance.json",
        references / f"{complex_id}.json",
    ]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    return None


def cmd_eval(designs, references, out_path=None) -> dict:
    """Score every design JSON against its reference and write a CSV.

    Designs are matched to references first by relative path, then by
    complex id against instance files produced by prepare. References
    may be design files themselves or serialized instances, in which
    case the native CDR is the target.
    """
    designs_dir = Path(designs)
    references_dir = Path(references)
    if not designs_dir.is_dir():
        raise CommandError(f"designs directory {designs_dir} does not exist")
    if not references_dir.is_dir():
        raise CommandError(
            f"references directory {references_dir} does not exist"
        )

    rows = []
    skipped = []
    for path in sorted(designs_dir.rglob("*.json")):
        doc = _read_json(path)
        if not isinstance(doc, dict) or "sequence" not in doc:
            continue  # index or summary files share the directory
        relative = path.relative_to(designs_dir)
        complex_id = str(doc.get("complex_id", path.stem))
        ref_path = _find_reference(references_dir, relative, complex_id)
        if ref_path is None:
            skipped.append(str(relative))
            LOGGER.warning("no reference for %s", relative)
            continue
        tag, ref_seq, ref_ca = _reference_arrays(_read_json(ref_path),
                                                 ref_path)
        design_ca = np.asarray(doc["ca"], dtype=np.float64)
        rows.append(MetricRow(
            design_id=str(doc.get("design_id", relative.as_posix())),
            cdr_tag=str(doc.get("cdr_tag", tag)),
            aar=aar(ref_seq, str(doc["sequence"])),
            rmsd=rmsd_ca(ref_ca, design_ca),
        ))

    if not rows:
        raise CommandError("no design/reference pairs were found")
    rows.sort(key=lambda row: row.design_id)
    report = MetricReport(rows=rows)
    out_path = Path(out_path) if out_path else designs_dir / "eval_metrics.csv"
    report.write_csv(out_path)
    return {
        "rows": len(rows),
        "skipped": skipped,
        "mean_aar": report.mean_aar,
        "mean_rmsd": report.mean_rmsd,
        "csv": str(out_path),
    }


# -- argv wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdrgen",
        description="Antibody CDR sequence and structure co-design",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="serialize manifest complexes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit the denoiser from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")

    p = sub.add_parser("sample", help="draw designs from the prior")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--config", default=None,
                   help="defaults to config.json beside the checkpoint")
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="all",
                   choices=["all", "train", "test"])

    p = sub.add_parser("optimize", help="perturb and denoise native CDRs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, required=True,
                   help="how many diffusion steps to perturb")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="all",
                   choices=["all", "train", "test"])

    p = sub.add_parser("eval", help="score designs against references")
    p.add_argument("--designs", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", default=None)

    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    if args.command == "prepare":
        return cmd_prepare(args.manifest, args.out)
    if args.command == "train":
        return cmd_train(RunConfig.load(args.config), resume=args.resume)
    if args.command == "sample":
        config = _resolve_config(args.config, args.checkpoint)
        return cmd_sample(config, args.checkpoint, args.count,
                          out_dir=args.out, split=args.split)
    if args.command == "optimize":
        config = _resolve_config(args.config, args.checkpoint)
        return cmd_optimize(config, args.checkpoint, args.steps, args.count,
                            out_dir=args.out, split=args.split)
    if args.command == "eval":
        return cmd_eval(args.designs, args.references, out_path=args.out)
    raise CommandError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = _dispatch(args)
    except Exception as err:  # every failure becomes machine-readable
        payload = {"error": type(err).__name__, "message": str(err)}
        details = getattr(err, "details", None)
        if details:
            payload["details"] = details
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
