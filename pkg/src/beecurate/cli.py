"""Command-line pipeline: score, filter, synth, probe, bench.

Fixed output names inside the chosen directory keep runs scriptable:
``losses.jsonl`` (score), ``manifest.json`` / ``report.json`` /
``histogram.csv`` (filter), ``synth.json`` (synth), ``probe.json``
(probe), ``bench.json`` (bench).

Every subcommand is deterministic given its inputs and seed, except the
wall-clock numbers of ``bench``.  Manifest timestamps honor the
``SOURCE_DATE_EPOCH`` convention so reruns can be byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fusion as fusion_mod
from . import lossstats, sampling, scorers, vit
from .records import (
    DatasetManifest,
    RecordError,
    read_losses,
    read_samples,
    write_losses,
    write_manifest,
)

SYNTH_CLEAN_MU = 1.0
SYNTH_CLEAN_SIGMA = 0.25
BENCH_VOCAB = 64
BENCH_EOS = 0


@dataclass(frozen=True)
class PipelineConfig:
    samples: str | None = None
    scorer: str = scorers.TOY_SCORER_ID
    losses: str | None = None
    n: float = 2.0
    out: str = "out"
    fusion: str = "mean:middle,deep combine=concat"
    temperature: float = 0.1
    top_k: int = 1
    top_p: float = 0.001
    max_new_tokens: int = 512
    seed: int = 0

    def sampling_config(self) -> sampling.SamplingConfig:
        return sampling.SamplingConfig(
            temperature=self.temperature,
            top_k=self.top_k,
            top_p=self.top_p,
            max_new_tokens=self.max_new_tokens,
            seed=self.seed,
        )


_INT_KEYS = {"top_k", "max_new_tokens", "seed"}
_FLOAT_KEYS = {"n", "temperature", "top_p"}


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the flat ``key = value`` config format."""
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _INT_KEYS:
            values[key] = int(raw)
        elif key in _FLOAT_KEYS:
            values[key] = float(raw)
        else:
            values[key] = raw
    return PipelineConfig(**values)


def _worker_count() -> int:
    raw = os.environ.get("BEECURATE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        stamp = datetime.now(tz=timezone.utc)
    return stamp.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _write_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _require_samples(config: PipelineConfig) -> list:
    if config.samples is None:
        raise ValueError("no samples path configured; set 'samples' in the config file")
    return read_samples(config.samples)


def cmd_score(config: PipelineConfig) -> int:
    samples = _require_samples(config)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.scorer == scorers.TOY_SCORER_ID:
        model = scorers.train_bigram(samples)
        records = scorers.score_dataset(samples, model, workers=_worker_count())
    elif config.scorer.startswith("external:"):
        path = config.scorer.removeprefix("external:")
        imported = scorers.import_external_losses(path, {s.id for s in samples})
        by_id = {r.sample_id: r for r in imported}
        records = [by_id[s.id] for s in samples]
    else:
        raise ValueError(
            f"unknown scorer {config.scorer!r}; use {scorers.TOY_SCORER_ID!r} or 'external:<path>'"
        )

    losses_path = out_dir / "losses.jsonl"
    write_losses(records, losses_path)
    scorer_id = records[0].scorer_id if records else config.scorer
    print(f"scored {len(records)} samples with {scorer_id} -> {losses_path}")
    return 0


def cmd_filter(config: PipelineConfig) -> int:
    samples = _require_samples(config)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    losses_path = Path(config.losses) if config.losses else out_dir / "losses.jsonl"
    loss_records = read_losses(losses_path)

    scorer_ids = sorted({r.scorer_id for r in loss_records})
    if len(scorer_ids) != 1:
        raise ValueError(f"losses file must hold exactly one scorer, found {scorer_ids}")
    filter_config = lossstats.FilterConfig(n=config.n, scorer_id=scorer_ids[0])

    kept, report = lossstats.filter_dataset(samples, loss_records, filter_config)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    manifest = DatasetManifest(
        name=f"{Path(config.samples).stem}-keep-n{config.n:g}",
        sample_ids=tuple(s.id for s in kept),
        source_uri=Path(config.samples).as_posix(),
        created_at=_created_at(),
        provenance={
            "losses": losses_path.name,
            "report": "report.json",
            "scorer_id": filter_config.scorer_id,
            "n": config.n,
            "threshold": report.threshold,
        },
    )
    write_manifest(manifest, out_dir / "manifest.json")
    _write_json(report.to_dict(), out_dir / "report.json")
    (out_dir / "histogram.csv").write_text(report.histogram_csv(), encoding="utf-8")

    print(
        f"kept {report.kept_count} / {report.stats.count} samples "
        f"(discarded {report.discarded_count}) at threshold {report.threshold:.6f} "
        f"= mu {report.stats.mu:.6f} + {config.n:g} * sigma {report.stats.sigma:.6f}"
    )
    return 0


def run_synth_experiment(
    count: int, contamination_rate: float, shift_in_sigmas: float, n: float, seed: int
) -> dict:
    """Plant high-loss outliers in a seeded normal population and filter.

    Returns the experiment report: planted-outlier recall, clean-sample
    retention, and the retention an exact normal population would give.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not 0 <= contamination_rate < 0.5:
        raise ValueError(f"contamination_rate must be in [0, 0.5), got {contamination_rate}")
    if shift_in_sigmas < 0:
        raise ValueError(f"shift_in_sigmas must be >= 0, got {shift_in_sigmas}")

    planted_count = round(count * contamination_rate)
    clean_count = count - planted_count
    rng = np.random.default_rng(seed)
    clean = rng.normal(SYNTH_CLEAN_MU, SYNTH_CLEAN_SIGMA, size=clean_count)
    planted_value = SYNTH_CLEAN_MU + shift_in_sigmas * SYNTH_CLEAN_SIGMA
    values = list(map(float, clean)) + [planted_value] * planted_count

    stats = lossstats.fit_normal(values)
    threshold = lossstats.outlier_threshold(stats, n)
    clean_kept = sum(1 for v in values[:clean_count] if not lossstats.is_outlier(v, threshold))
    planted_discarded = sum(
        1 for v in values[clean_count:] if lossstats.is_outlier(v, threshold)
    )
    kept = clean_kept + (planted_count - planted_discarded)

    return {
        "count": count,
        "contamination_rate": contamination_rate,
        "shift_in_sigmas": shift_in_sigmas,
        "n": n,
        "seed": seed,
        "clean_model": {"mu": SYNTH_CLEAN_MU, "sigma": SYNTH_CLEAN_SIGMA},
        "planted_value": planted_value,
        "fitted": {"mu": stats.mu, "sigma": stats.sigma},
        "threshold": threshold,
        "planted_count": planted_count,
        "planted_discarded": planted_discarded,
        "planted_recall": (planted_discarded / planted_count) if planted_count else None,
        "clean_count": clean_count,
        "clean_kept": clean_kept,
        "clean_retention": clean_kept / clean_count if clean_count else None,
        "retention": kept / count,
        "expected_retention": lossstats.expected_retention(n),
        "warnings": lossstats.FilterConfig(n=n, scorer_id="synthetic").warnings(),
    }


def cmd_synth(
    config: PipelineConfig, count: int, contamination_rate: float, shift_in_sigmas: float
) -> int:
    report = run_synth_experiment(
        count, contamination_rate, shift_in_sigmas, config.n, config.seed
    )
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(report, out_dir / "synth.json")
    for warning in report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    recall = report["planted_recall"]
    print(
        f"retention {report['retention']:.5f} (expected under normality "
        f"{report['expected_retention']:.5f}); planted recall "
        f"{'n/a' if recall is None else f'{recall:.3f}'}; "
        f"clean retention {report['clean_retention']:.5f}"
    )
    return 0


def run_probe(config: PipelineConfig) -> dict:
    """Forward + fuse + project + gradient-check one fusion strategy."""
    trunk_config = vit.TrunkConfig(seed=config.seed)
    trunk = vit.init_trunk(trunk_config)
    strategy = fusion_mod.parse_strategy(config.fusion, trunk_config)
    patches = np.random.default_rng(config.seed + 1).uniform(
        -1.0, 1.0, size=(trunk_config.num_patches, trunk_config.embed_input_dim)
    )
    probe_tap = strategy.layers[0] if strategy.layers else trunk_config.resolve_alias("middle")
    tap_set = strategy.tap_set() | {probe_tap}

    features = vit.forward_with_taps(trunk, patches, tap_set)
    untapped = vit.forward_with_taps(trunk, patches, set())
    params = fusion_mod.init_projector(
        trunk_config.hidden_dim, seed=config.seed, combine=strategy.combine
    )

    fused = fusion_mod.fuse(features, strategy, params)
    projected = fusion_mod.project(fused, params)
    baseline = fusion_mod.fusion_forward(
        features, fusion_mod.FusionStrategy(variant="last", combine=strategy.combine), params
    )

    checks: list[dict] = []

    def check(name: str, passed: bool, detail: str = "") -> None:
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    check(
        "tap_transparency",
        np.array_equal(features.final, untapped.final),
        "final feature map is identical with and without taps",
    )
    check(
        "shape_invariance",
        projected.shape == baseline.shape,
        f"projected {projected.shape} vs last-only baseline {baseline.shape}",
    )

    zero_tap = vit.TapFeatures(
        taps={probe_tap: np.zeros_like(features.final)}, final=features.final
    )
    additive = fusion_mod.FusionStrategy(variant="single", layers=(probe_tap,), combine="add")
    check(
        "additive_zero_tap_equals_last",
        np.array_equal(
            fusion_mod.fuse(zero_tap, additive, params),
            fusion_mod.fuse(features, fusion_mod.FusionStrategy(variant="last"), params),
        ),
        "additive combine of a zero tap reproduces the last-only features",
    )

    singleton = fusion_mod.FusionStrategy(
        variant="mean", layers=(probe_tap,), combine=strategy.combine
    )
    single = fusion_mod.FusionStrategy(
        variant="single", layers=(probe_tap,), combine=strategy.combine
    )
    check(
        "mean_singleton_equals_single",
        np.array_equal(
            fusion_mod.fuse(features, singleton, params),
            fusion_mod.fuse(features, single, params),
        ),
        f"mean over one layer matches layer:{probe_tap} exactly",
    )

    grad_err = fusion_mod.grad_check(strategy, params, features)
    check("grad_check", grad_err <= 1e-4, f"max relative error {grad_err:.3e} <= 1e-4")

    return {
        "strategy": strategy.label(),
        "combine": strategy.combine,
        "trunk": {
            "depth": trunk_config.depth,
            "hidden_dim": trunk_config.hidden_dim,
            "num_patches": trunk_config.num_patches,
            "heads": trunk_config.heads,
            "seed": trunk_config.seed,
            "parameters": trunk.num_parameters(),
        },
        "shapes": {
            "final": list(features.final.shape),
            "fused": list(fused.shape),
            "projected": list(projected.shape),
        },
        "grad_max_rel_err": grad_err,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


def cmd_probe(config: PipelineConfig) -> int:
    report = run_probe(config)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(report, out_dir / "probe.json")
    for check in report["checks"]:
        print(f"[{'ok' if check['passed'] else 'FAIL'}] {check['name']}: {check['detail']}")
    if not report["passed"]:
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"probe failed: {failed}", file=sys.stderr)
        return 1
    print(f"probe ok: {report['strategy']} (grad err {report['grad_max_rel_err']:.3e})")
    return 0


def make_bench_head(seed: int, vocab: int = BENCH_VOCAB, never_eos: bool = False):
    """Deterministic toy next-token head backed by a seeded logit table.

    With ``never_eos`` the EOS logit is pinned below everything else, so
    decode length is exactly ``max_new_tokens``.
    """
    table = np.random.default_rng(seed).normal(size=(257, vocab))
    if never_eos:
        table[:, BENCH_EOS] = table.min() - 1.0

    def head(prefix: tuple[int, ...]):
        row = (len(prefix) * 31 + (prefix[-1] if prefix else 7)) % table.shape[0]
        return table[row]

    return head


def run_bench(config: PipelineConfig, runs: int = 10, warmups: int = 3) -> dict:
    """Local wall-clock micro-benchmark of the toy pipeline.

    Preprocessing covers the visual side (trunk forward, fuse, project);
    inference covers the autoregressive decode loop.  Numbers are
    machine-local and only comparable to themselves.
    """
    if runs < 1 or warmups < 0:
        raise ValueError("runs must be >= 1 and warmups >= 0")
    trunk_config = vit.TrunkConfig(seed=config.seed)
    trunk = vit.init_trunk(trunk_config)
    strategy = fusion_mod.parse_strategy(config.fusion, trunk_config)
    params = fusion_mod.init_projector(
        trunk_config.hidden_dim, seed=config.seed, combine=strategy.combine
    )
    patches = np.random.default_rng(config.seed + 1).uniform(
        -1.0, 1.0, size=(trunk_config.num_patches, trunk_config.embed_input_dim)
    )
    head = make_bench_head(config.seed, never_eos=True)
    sampling_config = config.sampling_config()

    pre_times: list[float] = []
    inf_times: list[float] = []
    total_times: list[float] = []
    tokens_emitted = 0
    for i in range(warmups + runs):
        t0 = time.perf_counter()
        features = vit.forward_with_taps(trunk, patches, strategy.tap_set())
        fusion_mod.fusion_forward(features, strategy, params)
        t1 = time.perf_counter()
        tokens = sampling.decode_loop(head, sampling_config, eos_token_id=BENCH_EOS)
        t2 = time.perf_counter()
        if i >= warmups:
            pre_times.append(t1 - t0)
            inf_times.append(t2 - t1)
            total_times.append(t2 - t0)
            tokens_emitted = len(tokens)

    return {
        "runs": runs,
        "warmups": warmups,
        "seed": config.seed,
        "strategy": strategy.label(),
        "max_new_tokens": sampling_config.max_new_tokens,
        "tokens_emitted": tokens_emitted,
        "preprocessing_s": sum(pre_times) / runs,
        "inference_s": sum(inf_times) / runs,
        "total_s": sum(total_times) / runs,
    }


def cmd_bench(config: PipelineConfig, runs: int = 10, warmups: int = 3) -> int:
    report = run_bench(config, runs=runs, warmups=warmups)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(report, out_dir / "bench.json")
    print(
        f"# runs={report['runs']} warmups={report['warmups']} seed={report['seed']} "
        f"max_new_tokens={report['max_new_tokens']}"
    )
    print(f"{'Version':<14}{'Preprocessing Latency (s)':>27}{'Inference Latency (s)':>24}"
          f"{'Total Latency (s)':>20}")
    print(
        f"{'toy-pipeline':<14}{report['preprocessing_s']:>27.6f}"
        f"{report['inference_s']:>24.6f}{report['total_s']:>20.6f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beecurate",
        description="Loss-distribution data curation pipeline and model probes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--n", type=float, default=None, help="sigma multiplier override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", type=Path, default=None, help="output directory override")

    p_score = sub.add_parser("score", help="attach a loss to every sample")
    common(p_score)
    p_score.add_argument("--samples", type=Path, default=None)
    p_score.add_argument("--scorer", type=str, default=None,
                         help=f"{scorers.TOY_SCORER_ID!r} or 'external:<losses file>'")

    p_filter = sub.add_parser("filter", help="sigma-rule partition of scored samples")
    common(p_filter)
    p_filter.add_argument("--samples", type=Path, default=None)
    p_filter.add_argument("--losses", type=Path, default=None,
                          help="losses file (default: <out>/losses.jsonl)")

    p_synth = sub.add_parser("synth", help="planted-outlier experiment on synthetic losses")
    common(p_synth)
    p_synth.add_argument("--count", type=int, default=100_000)
    p_synth.add_argument("--contamination", type=float, default=0.0)
    p_synth.add_argument("--shift", type=float, default=8.0,
                         help="planted outlier shift, in clean sigmas")

    p_probe = sub.add_parser("probe", help="fusion-strategy invariants and gradient check")
    common(p_probe)
    p_probe.add_argument("--fusion", type=str, default=None,
                         help="strategy, e.g. 'last', 'layer:middle', 'mean:2,4 combine=add'")

    p_bench = sub.add_parser("bench", help="local latency micro-benchmark")
    common(p_bench)
    p_bench.add_argument("--runs", type=int, default=10)
    p_bench.add_argument("--warmups", type=int, default=3)

    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides: dict = {}
    for key in ("n", "seed", "samples", "scorer", "losses", "out", "fusion"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value) if key in ("samples", "losses", "out") else value
    return replace(config, **overrides) if overrides else config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "score":
            return cmd_score(config)
        if args.command == "filter":
            return cmd_filter(config)
        if args.command == "synth":
            return cmd_synth(config, args.count, args.contamination, args.shift)
        if args.command == "probe":
            return cmd_probe(config)
        if args.command == "bench":
            return cmd_bench(config, runs=args.runs, warmups=args.warmups)
        raise ValueError(f"unknown command {args.command!r}")
    except (RecordError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
