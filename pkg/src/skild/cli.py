"""Command-line front end.

Exit status: 0 on success, 1 on validation errors (bad flags, configs or
inputs), 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from skild import CONFIG_SCHEMA_VERSION, __version__, tensorio
from skild.config import (
    file_sha256,
    parse_power_law,
    resolve_schedule,
    run_manifest,
    write_manifest,
    _read_json,
)
from skild.errors import NumericalError, ValidationError
from skild.rng import chain_rng


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--grid: expected HxW, got {text!r}") from None
    return h, w


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# -- spectrum -----------------------------------------------------------------


def _dataset_files(manifest_path) -> tuple[list[Path], dict]:
    obj = _read_json(manifest_path)
    if "files" not in obj or not isinstance(obj["files"], list):
        raise ValidationError(f"{manifest_path}: files: required list missing")
    base = Path(manifest_path).parent
    files = [base / f for f in obj["files"]]
    for f in files:
        if not f.exists():
            raise ValidationError(f"{manifest_path}: files: {f} does not exist")
    return files, obj


def cmd_spectrum_estimate(args, argv) -> int:
    from skild.spectral import dct2
    from skild.spectrum import VarianceAccumulator

    files, meta = _dataset_files(args.input)
    acc = VarianceAccumulator(tuple(meta["shape"]) if "shape" in meta else None)
    for i, f in enumerate(files):
        acc.add(dct2(tensorio.load(f)), index=i)
    spec = acc.result()
    tensorio.save(args.output, spec.values)
    write_manifest(
        f"{args.output}.manifest.json",
        run_manifest(
            argv,
            artifacts=[Path(args.output).name],
            input=str(args.input),
            input_sha256=file_sha256(args.input),
            sample_count=spec.sample_count,
            shape=list(spec.shape),
        ),
    )
    print(f"estimated variance spectrum from {spec.sample_count} samples, shape {spec.shape}")
    return 0


def cmd_spectrum_fit(args, argv) -> int:
    from skild.spectral import frequency_grid
    from skild.spectrum import fit_power_law

    values = tensorio.load(args.spectrum)
    grid = frequency_grid(*values.shape[-2:])
    params = fit_power_law(values, grid)
    Path(args.out).write_text(json.dumps(params.to_json(), indent=2) + "\n")
    print(f"C={params.C:.6g} k0_sq={params.k0_sq:.6g} a={params.a:.6g} ({params.modes_fitted} modes)")
    if params.at_bound:
        print(f"warning: parameter(s) at bound: {', '.join(params.at_bound)}", file=sys.stderr)
    return 0


# -- schedule -----------------------------------------------------------------


def cmd_schedule_inspect(args, argv) -> int:
    from skild.schedule import build_tables, effective_resolution, lambda_of_t
    from skild.spectral import frequency_grid

    spec = resolve_schedule(args.spec)
    h, w = _parse_grid(args.grid)
    tables = build_tables(spec, frequency_grid(h, w))
    deciles = np.linspace(0, 100, 11)
    rows = []
    for n in range(1, spec.N + 1, args.every):
        t = n / spec.N
        snr = tables.snr(n).ravel()
        q = np.percentile(snr, deciles) if np.all(np.isfinite(snr)) else np.percentile(
            np.where(np.isfinite(snr), snr, np.finfo(float).max), deciles
        )
        row = {
            "n": n,
            "t": t,
            "lambda": lambda_of_t(spec, t),
            "R_eff": effective_resolution(spec, t, args.tau, size=max(h, w)),
        }
        row.update({f"snr_p{int(d)}": float(v) for d, v in zip(deciles, q)})
        rows.append(row)
    if rows[-1]["n"] != spec.N:
        n = spec.N
        snr = tables.snr(n).ravel()
        q = np.percentile(np.where(np.isfinite(snr), snr, np.finfo(float).max), deciles)
        row = {"n": n, "t": 1.0, "lambda": lambda_of_t(spec, 1.0),
               "R_eff": effective_resolution(spec, 1.0, args.tau, size=max(h, w))}
        row.update({f"snr_p{int(d)}": float(v) for d, v in zip(deciles, q)})
        rows.append(row)
    _write_csv(args.csv, rows)
    print(f"wrote {len(rows)} rows; R_eff(t=1, tau={args.tau}) = {rows[-1]['R_eff']:.4f}")
    return 0


def cmd_sr_start(args, argv) -> int:
    from skild.schedule import choose_start_timestep, effective_resolution

    spec = resolve_schedule(args.spec)
    n0 = choose_start_timestep(spec, args.target_res, args.tau)
    r = effective_resolution(spec, n0 / spec.N, args.tau)
    print(json.dumps({"n0": n0, "t": n0 / spec.N, "R_eff": r, "tau": args.tau}))
    return 0


# -- sampling -----------------------------------------------------------------


def _load_s0(arg: str, grid_shape):
    from skild.spectral import frequency_grid
    from skild.spectrum import eval_power_law

    if arg.endswith(".json"):
        params = parse_power_law(_read_json(arg), arg)
        if grid_shape is None:
            raise ValidationError("--grid: required when --s0 is a power-law params file")
        s0 = eval_power_law(params, frequency_grid(*grid_shape)).values
        return s0, {"params": params.to_json()}
    s0 = tensorio.load(arg)
    return s0, {"file": str(arg), "sha256": file_sha256(arg)}


def cmd_sample(args, argv) -> int:
    from skild.ddpm import CheatDenoiser, DiffusionState, GaussianOracleDenoiser, ancestral_sample, forward_marginal
    from skild.schedule import build_tables
    from skild.sde import em_reverse, ode_reverse, pc_reverse, score_from_denoiser
    from skild.spectral import dct2, frequency_grid, idct2

    spec = resolve_schedule(args.spec)
    x0_pix = None
    den_desc = args.denoiser
    if args.denoiser.startswith("cheat:"):
        x0_pix = tensorio.load(args.denoiser.split(":", 1)[1])
    elif args.denoiser != "gaussian":
        raise ValidationError(f"--denoiser: expected 'gaussian' or 'cheat:<x0.skft>', got {args.denoiser!r}")
    grid_shape = _parse_grid(args.grid) if args.grid else (x0_pix.shape[-2:] if x0_pix is not None else None)
    s0, s0_prov = _load_s0(args.s0, grid_shape)
    grid = frequency_grid(*s0.shape[-2:])
    tables = build_tables(spec, grid)
    start_n = spec.N if args.start_n is None else args.start_n
    if not 1 <= start_n <= spec.N:
        raise ValidationError(f"--start-n: must lie in [1, {spec.N}]")
    if x0_pix is not None:
        x0 = dct2(x0_pix)
        if x0.shape[-2:] != s0.shape[-2:]:
            raise ValidationError(f"--denoiser: x0 shape {x0.shape} does not match S0 shape {s0.shape}")
        denoiser = CheatDenoiser(x0)
    else:
        denoiser = GaussianOracleDenoiser(s0, tables)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts, timings = [], []
    for i in range(args.count):
        rng = chain_rng(args.seed, i)
        t_start = time.perf_counter()
        if x0_pix is not None:
            state = forward_marginal(x0, start_n, tables, s0, rng)
        else:
            shape = np.broadcast_shapes(s0.shape, grid.shape)
            state = DiffusionState(start_n, np.sqrt(s0) * rng.standard_normal(shape))
        if args.sampler == "ancestral":
            xs = ancestral_sample(state, denoiser, tables, s0, rng)
        else:
            score = score_from_denoiser(denoiser, tables, s0)
            steps = args.steps or start_n
            if args.sampler == "em":
                xs = em_reverse(state, score, spec, grid, s0, steps, rng)
            elif args.sampler == "ode":
                xs = ode_reverse(state, score, spec, grid, s0, steps)
            else:
                xs = pc_reverse(state, score, spec, grid, s0, steps, args.corrector_iters, args.corrector_step, rng)
        name = f"sample_{i:05d}.skft"
        tensorio.save(out / name, idct2(xs))
        artifacts.append(name)
        timings.append(time.perf_counter() - t_start)
    write_manifest(
        out / "manifest.json",
        run_manifest(
            argv,
            seed=args.seed,
            schedule=spec,
            s0=s0_prov,
            artifacts=artifacts,
            sampler=args.sampler,
            denoiser=den_desc,
            start_n=start_n,
            count=args.count,
            steps=args.steps,
            corrector_iters=args.corrector_iters,
            corrector_step=args.corrector_step,
            timings_s=timings,
            space="pixel",
        ),
    )
    print(f"wrote {args.count} samples to {out}")
    return 0


# -- ising --------------------------------------------------------------------


def _beta(text: str) -> float:
    from skild.ising import BETA_C

    if text in ("crit", "critical", "c"):
        return BETA_C
    if text in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"--beta: expected a number or 'crit', got {text!r}") from None


def cmd_ising_gen(args, argv) -> int:
    from skild.ising import generate_dataset

    beta = _beta(args.beta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = dict(spacing=args.spacing, spacing_unit=args.spacing_unit)
    ds = generate_dataset(args.L, args.chains, args.burn_in, args.samples, args.seed, beta, **opts)
    names = []
    for i, s in enumerate(ds.samples):
        name = f"spins_{i:06d}.skft"
        tensorio.save(out / name, s.astype(np.float64))
        names.append(name)
    holdout_names = []
    if args.holdout:
        held = generate_dataset(
            args.L, args.chains, args.burn_in, args.holdout, args.seed, beta, chain_offset=args.chains, **opts
        )
        for i, s in enumerate(held.samples):
            name = f"holdout_{i:06d}.skft"
            tensorio.save(out / name, s.astype(np.float64))
            holdout_names.append(name)
    manifest = run_manifest(
        argv,
        seed=args.seed,
        artifacts=names + holdout_names,
        files=names,
        holdout_files=holdout_names,
        shape=[args.L, args.L],
        generator=ds.manifest,
    )
    write_manifest(out / "manifest.json", manifest)
    print(f"wrote {len(names)} samples ({len(holdout_names)} held out) to {out}")
    return 0


def cmd_ising_enum(args, argv) -> int:
    from skild.ising import exact_enumeration

    res = exact_enumeration(args.L, _beta(args.beta), _parse_ints(args.sides))
    res["pair"] = {str(k): v for k, v in res["pair"].items()}
    res["corners"] = {str(k): v for k, v in res["corners"].items()}
    text = json.dumps(res, indent=2, default=float) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- observables --------------------------------------------------------------


def _input_fields(path) -> np.ndarray:
    path = Path(path)
    man = path / "manifest.json"
    if man.exists():
        obj = _read_json(man)
        names = obj.get("files") or [a for a in obj.get("artifacts", []) if a.endswith(".skft")]
    else:
        names = sorted(p.name for p in path.glob("*.skft"))
    if not names:
        raise ValidationError(f"--inputs: no .skft files in {path}")
    fields = [tensorio.load(path / n) for n in names]
    shapes = {f.shape for f in fields}
    if len(shapes) != 1:
        raise ValidationError(f"--inputs: fields have differing shapes {sorted(shapes)}")
    return np.stack(fields)


def cmd_kappa4(args, argv) -> int:
    from skild.observables import BootstrapPlan, kappa4

    fields = _input_fields(args.inputs)
    plan = BootstrapPlan(args.bootstrap, args.confidence, args.seed) if args.bootstrap else None
    rows = kappa4(fields, _parse_ints(args.sides), plan)
    _write_csv(args.csv, [r.as_dict() for r in rows])
    for r in rows:
        print(f"d={r.side:3d} kappa4={r.kappa4:+.6f} [{r.ci_low:+.6f}, {r.ci_high:+.6f}]")
    return 0


def cmd_validate_bicubic(args, argv) -> int:
    from skild.observables import compare_signal_vs_bicubic
    from skild.schedule import choose_start_timestep

    spec = resolve_schedule(args.spec)
    x0 = tensorio.load(args.x0)
    h = x0.shape[-2]
    target = h / args.factor
    rows = []
    for tau in _parse_floats(args.thresholds):
        n = choose_start_timestep(spec, target, tau)
        mse, p = compare_signal_vs_bicubic(x0, spec, n, args.factor, (args.range_lo, args.range_hi))
        rows.append({"threshold": tau, "n": n, "mse": mse, "psnr": p})
    _write_csv(args.csv, rows)
    for r in rows:
        print(f"SNR={r['threshold']:<8g} n={r['n']:5d} MSE={r['mse']:.4e} PSNR={r['psnr']:.2f}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skild", description="Scale-invariant frequency-space diffusion toolkit")
    p.add_argument("--version", action="version", version=f"skild {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("--threads", type=int, default=os.cpu_count(), help="worker cap (outputs do not depend on it)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="variance spectra").add_subparsers(dest="action", required=True)
    e = sp.add_parser("estimate")
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_spectrum_estimate)
    f = sp.add_parser("fit")
    f.add_argument("--spectrum", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_spectrum_fit)

    sc = sub.add_parser("schedule", help="schedules").add_subparsers(dest="action", required=True)
    i = sc.add_parser("inspect")
    i.add_argument("--spec", required=True)
    i.add_argument("--grid", required=True)
    i.add_argument("--csv", required=True)
    i.add_argument("--tau", type=float, default=0.1)
    i.add_argument("--every", type=int, default=1)
    i.set_defaults(func=cmd_schedule_inspect)

    s = sub.add_parser("sample", help="run a reverse sampler")
    s.add_argument("--spec", required=True)
    s.add_argument("--s0", required=True)
    s.add_argument("--denoiser", required=True)
    s.add_argument("--start-n", type=int)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid")
    s.add_argument("--sampler", choices=("ancestral", "em", "ode", "pc"), default="ancestral")
    s.add_argument("--steps", type=int)
    s.add_argument("--corrector-iters", type=int, default=1)
    s.add_argument("--corrector-step", type=float, default=0.01)
    s.set_defaults(func=cmd_sample)

    isg = sub.add_parser("ising", help="critical Ising data").add_subparsers(dest="action", required=True)
    g = isg.add_parser("gen")
    g.add_argument("--L", type=int, default=128)
    g.add_argument("--chains", type=int, default=8)
    g.add_argument("--burn-in", type=int, default=2000)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--holdout", type=int, default=0)
    g.add_argument("--beta", default="crit")
    g.add_argument("--spacing", type=int, help="save spacing (default 2L^2 flips, or 1 step)")
    g.add_argument("--spacing-unit", choices=("flips", "steps"), default="flips")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_ising_gen)
    en = isg.add_parser("enum")
    en.add_argument("--L", type=int, default=4)
    en.add_argument("--beta", default="crit")
    en.add_argument("--sides", default="1,2")
    en.add_argument("--out")
    en.set_defaults(func=cmd_ising_enum)

    k = sub.add_parser("kappa4", help="connected four-point correlator")
    k.add_argument("--inputs", required=True)
    k.add_argument("--sides", default="1,2,4,8,16,32,64")
    k.add_argument("--bootstrap", type=int, default=1000)
    k.add_argument("--confidence", type=float, default=0.99)
    k.add_argument("--seed", type=int, required=True)
    k.add_argument("--csv", required=True)
    k.set_defaults(func=cmd_kappa4)

    v = sub.add_parser("validate-bicubic", help="forward signal vs bicubic down-up")
    v.add_argument("--x0", required=True)
    v.add_argument("--spec", required=True)
    v.add_argument("--thresholds", default="1,0.5,0.1,0.05,0.01,0.005")
    v.add_argument("--factor", type=int, default=4)
    v.add_argument("--csv", required=True)
    v.add_argument("--range-lo", type=float, default=-1.0)
    v.add_argument("--range-hi", type=float, default=1.0)
    v.set_defaults(func=cmd_validate_bicubic)

    r = sub.add_parser("sr-start", help="super-resolution start timestep")
    r.add_argument("--spec", required=True)
    r.add_argument("--target-res", type=float, required=True)
    r.add_argument("--tau", type=float, default=0.1)
    r.set_defaults(func=cmd_sr_start)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, ["skild", *argv])
    except ValidationError as exc:
        print(f"skild: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"skild: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
