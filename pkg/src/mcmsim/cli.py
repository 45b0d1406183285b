"""Command-line experiment runner: mcmsim {gen,run,decode,analyze,reproduce-tables,leakage-map}."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analysis import CountTable, bell_fidelity, detection_frequency, markdown_report, retry_histogram, wilson_interval
from .circuit import Circuit
from .config import ConfigError, ExperimentConfig, load_config
from .decoder import DetectorLayout, build_matching_graph, decode_values
from .decoder.detectors import lost_bit_rng
from .generators import DistillSpec, GerbSpec, RepCodeSpec, gen_distillation, gen_gerb, gen_ramsey_mcm, gen_walking_repcode
from .lindblad import TWO_PI, default_builder, leakage_map
from .sim.engine import StructuralError, iter_batch
from .sim.frames import FrameBatch, sample_batch
from .sim.noise import NoiseModel
from .sim.rng import shot_seed

FRAMES_SCHEMA = "mcmsim.frames/1"
TABLEAU_SCHEMA = "mcmsim.shots/1"
EXIT_CONFIG = 2
EXIT_STRUCTURAL = 3


# file helpers --------------------------------------------------------------------------


class _AtomicFile:
    """Write to a temporary file in the target directory, then rename into place."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self.tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.")
        self.fh = os.fdopen(fd, "w", newline="")
        return self.fh

    def __exit__(self, exc_type, exc, tb):
        self.fh.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            os.unlink(self.tmp)
        return False


def write_atomic(path, text: str):
    with _AtomicFile(path) as fh:
        fh.write(text)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_circuit(path, circuit: Circuit):
    """Canonical circuit text plus a JSON metadata sidecar next to it."""
    write_atomic(path, circuit.to_text())
    write_atomic(sidecar_path(path), json.dumps(circuit.metadata, sort_keys=True, indent=1) + "\n")


def read_circuit_file(path) -> Circuit:
    meta_path = sidecar_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Circuit.from_text(Path(path).read_text(), meta)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return f"{x:.9g}"


def write_frames_jsonl(path, batch: FrameBatch, config_hash: str, seed: int, label: str = ""):
    header = {
        "schema": FRAMES_SCHEMA,
        "config_hash": config_hash,
        "label": label,
        "seed": seed,
        "keys": [list(k) for k in batch.keys],
        "loop_keys": [list(k) for k in batch.loop_keys],
    }
    with _AtomicFile(path) as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in range(batch.shots):
            row = {
                "shot": s,
                "meas": batch.meas[s].tolist(),
                "attempts": int(batch.attempts[s]),
                "heralded": bool(batch.heralded[s]),
            }
            if batch.loop_keys:
                row["loop"] = batch.loop_meas[s, : int(batch.attempts[s])].tolist()
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_shots_jsonl(path, circuit: Circuit) -> tuple[dict, np.ndarray]:
    """Header and a (shots, keys) value array in ``circuit.measurement_keys()`` order."""
    from .sim.engine import ShotRecord

    with open(path) as fh:
        header = json.loads(fh.readline())
        lines = [line for line in fh if line.strip()]
    keys = circuit.measurement_keys()
    if header.get("schema") == FRAMES_SCHEMA:
        cols = [tuple(k) for k in header["keys"]]
        if cols != keys:
            raise ValueError("shot file keys do not match the circuit")
        values = np.array([json.loads(line)["meas"] for line in lines], dtype=np.int8).reshape(len(lines), len(keys))
    elif header.get("schema") == TABLEAU_SCHEMA:
        values = np.array([ShotRecord.from_json(line).measurement_vector(circuit) for line in lines], dtype=np.int8)
    else:
        raise ValueError(f"unknown shot file schema {header.get('schema')!r}")
    return header, values


# circuit generation ----------------------------------------------------------------------


def build_circuits(cfg: ExperimentConfig) -> dict:
    """label -> circuit for the configured experiment."""
    s = cfg.spec
    if cfg.kind == "repcode":
        return {"": gen_walking_repcode(RepCodeSpec(s["distance"], s["cycles"], s["phase_sensitive"], s["seed"]))}
    if cfg.kind == "distill":
        return {
            b: gen_distillation(DistillSpec(s["encoded"], b, s["max_retries"], s["antiferro_variant"])) for b in s["bases"]
        }
    if cfg.kind == "gerb":
        return {f"blocks{n}": gen_gerb(GerbSpec(n, s["pair_count"], seed=cfg.seed + j)) for j, n in enumerate(s["blocks"])}
    if cfg.kind == "ramsey_mcm":
        return {f"cycles{n}": gen_ramsey_mcm(n, include_light=s["include_light"]) for n in s["cycles"]}
    return {}


# run -----------------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, output: Path | None = None, threads: int | None = None) -> dict:
    """Run ``cfg`` and write its output bundle; returns a summary dict."""
    out = Path(output or cfg.output)
    if not out.is_absolute():
        out = Path.cwd() / out
    threads = threads or cfg.threads
    h = cfg.config_hash
    noise = cfg.noise_model()
    write_atomic(out / "config.yaml", cfg.to_yaml())
    runner = {
        "repcode": _run_repcode,
        "distill": _run_distill,
        "gerb": _run_gerb,
        "ramsey_mcm": _run_ramsey,
        "replenish": _run_replenish,
        "leakage_map": _run_leakage,
    }[cfg.kind]
    summary, sections = runner(cfg, noise, out, threads, h)
    header = [f"config_hash: `{h}`", f"kind: {cfg.kind}", f"shots: {cfg.shots}", f"seed: {cfg.seed}"]
    report = markdown_report(f"{cfg.kind} run", {"Configuration": "\n".join(f"- {x}" for x in header), **sections})
    write_atomic(out / "report.md", report)
    return summary


def _run_repcode(cfg, noise, out, threads, h):
    s = cfg.spec
    spec = RepCodeSpec(s["distance"], s["cycles"], s["phase_sensitive"], s["seed"])
    circuit = gen_walking_repcode(spec)
    write_circuit(out / "circuit.txt", circuit)
    if cfg.engine == "tableau":
        records = list(iter_batch(circuit, noise, cfg.shots, cfg.seed, threads=threads))
        with _AtomicFile(out / "shots.jsonl") as fh:
            fh.write(json.dumps({"schema": TABLEAU_SCHEMA, "config_hash": h, "seed": cfg.seed}) + "\n")
            for r in records:
                fh.write(r.to_json() + "\n")
        values = np.array([r.measurement_vector(circuit) for r in records], dtype=np.int8)
    else:
        batch = sample_batch(circuit, noise, cfg.shots, cfg.seed, threads=threads)
        write_frames_jsonl(out / "shots.jsonl", batch, h, cfg.seed)
        values = batch.meas
    layout = DetectorLayout(circuit)
    rng = lambda: lost_bit_rng(shot_seed(cfg.seed, ex._DECODE_STREAM))
    parities = layout.evaluate(values, rng())[0]
    freq = detection_frequency(parities, [i[0] for i in layout.ids], seed=cfg.seed)
    predicted, actual = decode_values(circuit, values, rng(), graph=build_matching_graph(circuit, noise), use_loss=s["use_loss"])
    fails = int(np.count_nonzero(predicted != actual))
    lo, hi = wilson_interval(fails, cfg.shots)
    write_atomic(
        out / "detection.csv",
        _csv_text(["cycle", "mean", "bootstrap_std", "config_hash"], [[int(c), _g(m), _g(e), h] for c, m, e in zip(freq.cycles, freq.mean, freq.std)]),
    )
    row = {"distance": spec.distance, "cycles": spec.cycles, "shots": cfg.shots, "failures": fails, "rate": fails / cfg.shots, "ci_low": lo, "ci_high": hi}
    write_atomic(out / "summary.csv", _csv_text(list(row) + ["config_hash"], [[_fmt(v) for v in row.values()] + [h]]))
    det = [{"cycle": int(c), "mean": float(m), "bootstrap_std": float(e)} for c, m, e in zip(freq.cycles, freq.mean, freq.std)]
    print(f"logical failures: {fails}/{cfg.shots} (rate {fails / cfg.shots:.3e}, 95% CI [{lo:.3e}, {hi:.3e}])")
    return row, {"Logical failure": [row], "Detection frequency": det}


def _run_distill(cfg, noise, out, threads, h):
    s = cfg.spec
    res = ex.DistillResult(DistillSpec(s["encoded"], s["bases"][0], s["max_retries"], s["antiferro_variant"]))
    for j, basis in enumerate(s["bases"]):
        spec = DistillSpec(s["encoded"], basis, s["max_retries"], s["antiferro_variant"])
        circuit = gen_distillation(spec)
        write_circuit(out / f"circuit_{basis}.txt", circuit)
        seed = shot_seed(cfg.seed, j)
        batch = sample_batch(circuit, noise, cfg.shots, seed, threads=threads)
        write_frames_jsonl(out / f"shots_{basis}.jsonl", batch, h, seed, basis)
        res.bases[basis] = ex._score_distillation(spec, circuit, batch)
    hist = retry_histogram(res.attempts(), res.heralded())
    rows = []
    for basis, r in res.bases.items():
        for stage, f, n, disc in (("post_herald", r.post_failures, r.post_trials, r.post_discarded), ("pre_herald", r.pre_failures, r.pre_trials, 0)):
            lo, hi = wilson_interval(f, n) if n else (0.0, 1.0)
            rows.append({"basis": basis, "stage": stage, "failures": f, "trials": n, "rate": f / n if n else float("nan"), "ci_low": lo, "ci_high": hi, "discarded": disc})
    write_atomic(out / "summary.csv", _csv_text(list(rows[0]) + ["config_hash"], [[_fmt(v) for v in r.values()] + [h] for r in rows]))
    write_atomic(out / "retries.csv", _csv_text(["retries", "shots", "config_hash"], [[i, int(c), h] for i, c in enumerate(hist.counts)]))
    sections = {
        "Retry histogram": [{"retries": i, "shots": int(c)} for i, c in enumerate(hist.counts)],
        "Attempts": f"mean attempts {hist.mean_attempts:.4f} (95% CI [{hist.ci_low:.4f}, {hist.ci_high:.4f}]); not heralded: {hist.exhausted}",
        "Per-basis failures": rows,
    }
    summary = {"mean_attempts": hist.mean_attempts, "rows": rows}
    if set(res.bases) == {"XX", "YY", "ZZ"}:
        fid = bell_fidelity(res.counts("post"))
        sections["Bell fidelity"] = f"post-herald fidelity {fid.value:.5f} +- {fid.stderr:.5f}"
        summary["fidelity"] = fid.value
    print(f"mean attempts: {hist.mean_attempts:.4f}")
    for r in rows:
        print(f"{r['basis']} {r['stage']}: {r['failures']}/{r['trials']}")
    return summary, sections


def _sweep_sections(label, xs, ys, fits, h, out, names):
    rows = [{label: int(x), **{n: float(y[i]) for n, y in zip(names, ys)}} for i, x in enumerate(xs)]
    write_atomic(out / "summary.csv", _csv_text(list(rows[0]) + ["config_hash"], [[_fmt(v) for v in r.values()] + [h] for r in rows]))
    fit_rows = [{"quantity": n, "A": f["A"], "eps": f["eps"], "eps_stderr": f.stderr["eps"]} for n, f in zip(names, fits)]
    write_atomic(out / "fits.csv", _csv_text(list(fit_rows[0]) + ["config_hash"], [[_fmt(v) for v in r.values()] + [h] for r in fit_rows]))
    for r in fit_rows:
        print(f"{r['quantity']}: eps = {r['eps']:.5f} +- {r['eps_stderr']:.5f}")
    return {"points": rows, "fits": fit_rows}, {"Points": rows, "Decay fits": fit_rows}


def _run_gerb(cfg, noise, out, threads, h):
    s = cfg.spec
    for label, c in build_circuits(cfg).items():
        write_circuit(out / f"circuit_{label}.txt", c)
    r = ex.run_gerb(noise, s["blocks"], cfg.shots, cfg.seed, s["pair_count"], threads)
    return _sweep_sections("blocks", r.blocks, (r.success, r.survival), (r.success_fit, r.survival_fit), h, out, ("success", "survival"))


def _run_ramsey(cfg, noise, out, threads, h):
    s = cfg.spec
    for label, c in build_circuits(cfg).items():
        write_circuit(out / f"circuit_{label}.txt", c)
    r = ex.run_ramsey(noise, s["cycles"], cfg.shots, cfg.seed, s["include_light"], threads)
    return _sweep_sections("cycles", r.cycles, (r.survival, r.contrast), (r.loss_fit, r.contrast_fit), h, out, ("survival", "contrast"))


def _run_replenish(cfg, noise, out, threads, h):
    s = cfg.spec
    r = ex.run_replenish(noise, cfg.shots, cfg.seed, s["lz_yield"], s["sz_vacancies"])
    with _AtomicFile(out / "trials.jsonl") as fh:
        fh.write(json.dumps({"schema": "mcmsim.replenish/1", "config_hash": h, "seed": cfg.seed}) + "\n")
        for i, (f, t) in enumerate(zip(r.fill_after, r.total_ms)):
            fh.write(json.dumps({"trial": i, "sz_fill_after": float(f), "total_ms": float(t)}) + "\n")
    ok = int(np.sum(r.fill_after > r.target))
    lo, hi = wilson_interval(ok, len(r.fill_after))
    row = {"trials": len(r.fill_after), "above_target": ok, "fraction": ok / len(r.fill_after), "ci_low": lo, "ci_high": hi, "mean_total_ms": float(r.total_ms.mean())}
    write_atomic(out / "summary.csv", _csv_text(list(row) + ["config_hash"], [[_fmt(v) for v in row.values()] + [h]]))
    print(f"fill > {r.target}: {ok}/{len(r.fill_after)}")
    return row, {"Replenishment": [row]}


def _grid(spec):
    start, stop, num = spec
    return np.linspace(start, stop, int(num)) * TWO_PI * 1e6


def _run_leakage(cfg, noise, out, threads, h):
    s = cfg.spec
    levels = s["levels"]
    if levels and not Path(levels).is_absolute():
        levels = cfg.base_dir / levels
    reg, img = _grid(s["register_mhz"]), _grid(s["imaging_mhz"])
    loss = leakage_map(default_builder(s["register_scale"], levels), reg, img, s["duration_s"], threads=threads)
    rows = [[_g(dr / TWO_PI / 1e6), _g(di / TWO_PI / 1e6), f"{loss[i, j]:.9e}", h] for i, dr in enumerate(reg) for j, di in enumerate(img)]
    write_atomic(out / "leakage.csv", _csv_text(["delta_register_mhz", "delta_imaging_mhz", "loss", "config_hash"], rows))
    i, j = np.unravel_index(np.argmax(loss), loss.shape)
    row = {"max_loss": float(loss[i, j]), "at_register_mhz": float(reg[i] / TWO_PI / 1e6), "at_imaging_mhz": float(img[j] / TWO_PI / 1e6)}
    print(f"max loss {row['max_loss']:.3e} at register {row['at_register_mhz']:.3g} MHz, imaging {row['at_imaging_mhz']:.3g} MHz")
    return row, {"Leakage maximum": [row]}


def _fmt(v) -> str:
    if isinstance(v, float):
        return _g(v)
    return str(v)


# subcommands ----------------------------------------------------------------------------


def _noise_arg(value: str) -> NoiseModel:
    if value == "default":
        return NoiseModel.default()
    if value == "noiseless":
        return NoiseModel.noiseless()
    return NoiseModel.load(value)


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    circuits = build_circuits(cfg)
    if not circuits:
        raise ConfigError(f"kind: {cfg.kind} has no circuit to generate")
    out = Path(args.output)
    if len(circuits) == 1:
        write_circuit(out, next(iter(circuits.values())))
        print(out)
    else:
        for label, c in circuits.items():
            p = out.with_name(f"{out.stem}_{label}{out.suffix or '.txt'}")
            write_circuit(p, c)
            print(p)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    run_experiment(cfg, args.output, args.threads)
    return 0


def cmd_decode(args) -> int:
    circuit = read_circuit_file(args.circuit)
    header, values = read_shots_jsonl(args.shots, circuit)
    seed = header.get("seed", 0) if args.seed is None else args.seed
    noise = _noise_arg(args.noise)
    predicted, actual = decode_values(
        circuit, values, lost_bit_rng(shot_seed(seed, ex._DECODE_STREAM)), graph=build_matching_graph(circuit, noise), use_loss=not args.no_loss
    )
    fails = int(np.count_nonzero(predicted != actual))
    n = len(actual)
    lo, hi = wilson_interval(fails, n)
    print(f"logical failures: {fails}/{n} (rate {fails / n:.3e}, 95% CI [{lo:.3e}, {hi:.3e}])")
    if args.output:
        rows = [[s, int(p), int(a), header.get("config_hash", "")] for s, (p, a) in enumerate(zip(predicted, actual))]
        write_atomic(args.output, _csv_text(["shot", "predicted", "actual", "config_hash"], rows))
    return 0


def cmd_analyze(args) -> int:
    if args.counts:
        table = CountTable.from_csv(Path(args.counts).read_text())
        sys.stdout.write(table.to_csv())
        if {"XX", "YY", "ZZ"} <= set(table.rows):
            est = bell_fidelity(table)
            print(f"bell fidelity: {est.value:.5f} +- {est.stderr:.5f}")
        return 0
    if not (args.shots and args.circuit):
        raise ConfigError("analyze: give --counts, or --shots with --circuit")
    circuit = read_circuit_file(args.circuit)
    header, values = read_shots_jsonl(args.shots, circuit)
    layout = DetectorLayout(circuit)
    parities = layout.evaluate(values, lost_bit_rng(shot_seed(header.get("seed", 0), ex._DECODE_STREAM)))[0]
    freq = detection_frequency(parities, [i[0] for i in layout.ids], seed=header.get("seed", 0))
    text = _csv_text(
        ["cycle", "mean", "bootstrap_std", "config_hash"],
        [[int(c), _g(m), _g(e), header.get("config_hash", "")] for c, m, e in zip(freq.cycles, freq.mean, freq.std)],
    )
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_reproduce(args) -> int:
    report = ex.reproduce_paper_tables(check=False)
    text = report.markdown()
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    for m in report.mismatches:
        print(f"mismatch: {m}", file=sys.stderr)
    return 1 if report.mismatches else 0


def cmd_leakage(args) -> int:
    reg = np.linspace(args.register_mhz[0], args.register_mhz[1], int(args.register_mhz[2])) * TWO_PI * 1e6
    img = np.linspace(args.imaging_mhz[0], args.imaging_mhz[1], int(args.imaging_mhz[2])) * TWO_PI * 1e6
    loss = leakage_map(default_builder(args.register_scale, args.levels), reg, img, args.duration, threads=args.threads)
    rows = [[_g(dr / TWO_PI / 1e6), _g(di / TWO_PI / 1e6), f"{loss[i, j]:.9e}"] for i, dr in enumerate(reg) for j, di in enumerate(img)]
    write_atomic(args.output, _csv_text(["delta_register_mhz", "delta_imaging_mhz", "loss"], rows))
    print(args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcmsim", description="Neutral-atom midcircuit-measurement QEC simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate the circuit(s) of an experiment config")
    g.add_argument("config")
    g.add_argument("-o", "--output", default="circuit.txt")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment config and write its output bundle")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, help="worker processes; results do not depend on it")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("decode", help="decode a shot file against its circuit")
    d.add_argument("--circuit", required=True)
    d.add_argument("--shots", required=True)
    d.add_argument("--noise", default="default", help="default, noiseless or a noise YAML path")
    d.add_argument("--no-loss", action="store_true", help="ignore loss information")
    d.add_argument("--seed", type=int, help="seed for lost-bit randomization (default: from the shot file)")
    d.add_argument("-o", "--output", help="per-shot CSV of predicted and actual flips")
    d.set_defaults(func=cmd_decode)

    a = sub.add_parser("analyze", help="detection frequencies from shots, or Wilson/Bell summary from counts")
    a.add_argument("--counts", help="CSV with condition,failures,trials columns")
    a.add_argument("--shots")
    a.add_argument("--circuit")
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("reproduce-tables", help="recompute the published failure and fidelity tables")
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_reproduce)

    lk = sub.add_parser("leakage-map", help="register loss over a detuning grid")
    lk.add_argument("--register-mhz", type=float, nargs=3, default=[-200.0, 200.0, 5], metavar=("START", "STOP", "NUM"))
    lk.add_argument("--imaging-mhz", type=float, nargs=3, default=[-150.0, 50.0, 41], metavar=("START", "STOP", "NUM"))
    lk.add_argument("--duration", type=float, default=7e-3, help="imaging time in seconds")
    lk.add_argument("--register-scale", type=float, default=1.0)
    lk.add_argument("--levels", help="level-model YAML (default: bundled)")
    lk.add_argument("--threads", type=int, default=1)
    lk.add_argument("-o", "--output", default="leakage.csv")
    lk.set_defaults(func=cmd_leakage)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StructuralError as exc:
        print(f"structural error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
