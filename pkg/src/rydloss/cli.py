"""Command-line entry point: ``rydloss <subcommand>``.

Frequencies on the command line are nu = omega/2pi in MHz, lengths in um,
times in us (ns for time tags).  Exit codes: 0 success, 2 usage or input
error, 3 numerical failure (a diagnostic JSON is written to the output
directory).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .correlator import (
    DEFAULT_BIN_NS,
    DEFAULT_BLOCK_NS,
    DEFAULT_WINDOW_NS,
    SYNTH_MODELS,
    SynthConfig,
    correlation_summary,
    g2_from_tags,
    g3_from_tags,
    read_tags,
    synth_tags,
    write_tags_binary,
    write_tags_csv,
)
from .errors import RydlossError, ValidationError
from .medium import (
    angular_to_mhz,
    derive_scales,
    from_experiment_units,
    load_config,
    mhz_to_angular,
    preset_path,
    to_experiment_units,
)

log = logging.getLogger("rydloss")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_PRESET = "paper"

# flag -> config key; defaults come from the config (paper preset unless --config)
_OVERRIDES = [
    ("omega_c", "omega_c_MHz", "control Rabi frequency Omega_c/2pi in MHz (paper preset: 25)"),
    ("gamma", "gamma_MHz", "intermediate-state linewidth Gamma/2pi in MHz (paper preset: 7)"),
    ("gamma_s", "gamma_s_MHz", "Rydberg linewidth gamma_s/2pi in MHz (paper preset: 0.3)"),
    ("od", "OD", "peak-density optical depth (paper preset: 37)"),
    ("sigma_z", "sigma_z_um", "rms cloud length in um (paper preset: 40)"),
    ("c6", "C6", "van der Waals coefficient C6/2pi in MHz um^6 (paper preset: 1.244e7)"),
    ("g", "g_MHz", "peak collective coupling g/2pi in MHz; default: derived from OD"),
]


class UsageError(Exception):
    pass


# --- parsing helpers ---------------------------------------------------------

def parse_range(text: str) -> np.ndarray:
    """``lo:hi:step`` (inclusive of hi up to rounding) or a single value."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"cannot parse range {text!r}; expected lo:hi:step") from None
    if len(nums) == 1:
        return np.array(nums)
    if len(nums) != 3:
        raise UsageError(f"range {text!r} must have the form lo:hi:step")
    lo, hi, step = nums
    if step <= 0 or hi < lo:
        raise UsageError(f"range {text!r} is empty")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


# --- output ------------------------------------------------------------------

class Emitter:
    """Writes outputs atomically (temp file + rename) under ``out_dir``."""

    def __init__(self, out_dir, meta):
        self.out_dir = Path(out_dir)
        self.meta = meta
        self.written = []

    def path(self, name) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.out_dir / p

    def text(self, name, content: str) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(str(path))
        log.info("wrote %s", path)
        return path

    def csv(self, name, header, rows, comment=None) -> Path:
        buf = io.StringIO()
        if comment:
            for line in comment:
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self.text(name, buf.getvalue())

    def json(self, name, payload, with_meta=True) -> Path:
        if with_meta:
            payload = dict(payload)
            payload["metadata"] = self.meta
        return self.text(name, _json(payload))

    def sidecar(self, data_path: Path, extra=None) -> Path:
        meta = dict(self.meta)
        if extra:
            meta.update(extra)
        return self.text(str(data_path) + ".meta.json", _json(meta))


# --- configuration -----------------------------------------------------------

def resolve_config(args) -> dict:
    """Config file (or bundled preset) with flag overrides applied on top."""
    source = args.config or DEFAULT_PRESET
    path = Path(source)
    if not path.exists():
        try:
            path = preset_path(source)
        except ValidationError:
            raise UsageError(f"config {source!r} is neither a file nor a bundled preset") from None
    try:
        values = load_config(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for attr, key, _ in _OVERRIDES:
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    for attr, key in (("delta", "delta_MHz"), ("deltas", "delta_s_MHz"), ("profile", "profile")):
        v = getattr(args, attr, None)
        if isinstance(v, (int, float, str)) and not isinstance(v, bool):
            if attr in ("delta", "deltas") and isinstance(v, str):
                rng = parse_range(v)
                if rng.size != 1:
                    continue
                v = float(rng[0])
            values[key] = v
    values["_source"] = str(path)
    return values


def medium_from(args):
    values = resolve_config(args)
    source = values.pop("_source")
    params = from_experiment_units(values)
    return params, source


def _metadata(args, params=None, source=None, wall=None):
    meta = {
        "command": args.command,
        "argv": list(getattr(args, "_argv", [])),
        "version": __version__,
        "python": platform.python_version(),
        "seed": args.seed,
    }
    if params is not None:
        meta["config"] = to_experiment_units(params)
        meta["config_source"] = source
    if wall is not None:
        meta["wall_time_s"] = wall
    return meta


def _add_medium_flags(p, single_detuning=True):
    g = p.add_argument_group("medium overrides (take precedence over --config)")
    for attr, _, help_ in _OVERRIDES:
        g.add_argument("--" + attr.replace("_", "-"), dest=attr, type=float, default=None, help=help_)
    g.add_argument("--profile", choices=("gaussian", "homogeneous"), default=None,
                   help="axial density profile (default: gaussian)")
    if single_detuning:
        g.add_argument("--delta", type=float, default=None,
                       help="intermediate detuning delta/2pi in MHz (paper preset: 25)")
        g.add_argument("--deltas", type=float, default=None,
                       help="two-photon detuning delta_s/2pi in MHz (paper preset: 0)")


# --- subcommands -------------------------------------------------------------

def cmd_scales(args):
    from .interactions import chi_bar, resonance_detunings
    params, source = medium_from(args)
    sc = derive_scales(params, chi_bar(0.0, params))
    res = resonance_detunings(params, method="closed_form")
    out = {
        "phi": sc.phi,
        "r_b_um": sc.r_b,
        "OD_b": sc.od_b,
        "delta0_MHz": angular_to_mhz(res.delta0),
        "deltaPlus_MHz": angular_to_mhz(res.delta_plus),
        "g_MHz": angular_to_mhz(params.g_peak),
        "omega_c_scale_MHz": angular_to_mhz(sc.omega_c_scale),
        "k_c_per_um": sc.k_c,
        "mass": {"re": sc.mass_m.real, "im": sc.mass_m.imag},
    }
    em = Emitter(args.out_dir, _metadata(args, params, source))
    em.json(args.out, out)
    print(_json(out), end="")


def cmd_dispersion(args):
    from .polaritons import BRANCHES, branch_spectrum, default_q_grid
    params, source = medium_from(args)
    q_max = args.q_max if args.q_max is not None else 50.0 * params.g_peak / params.light_speed
    q = default_q_grid(params, q_max=q_max, n=args.points)
    spec = branch_spectrum(q, params)
    rows = []
    for k, qq in enumerate(spec.q_grid):
        for b in BRANCHES:
            w = spec.omega[b][k]
            rows.append((qq, b, angular_to_mhz(w.real), angular_to_mhz(w.imag),
                         abs(spec.rydberg_overlap[b][k]) ** 2))
    em = Emitter(args.out_dir, _metadata(args, params, source))
    path = em.csv(args.out, ["q_per_um", "branch", "re_omega_MHz", "im_omega_MHz", "abs_S2"], rows)
    em.sidecar(path)


def cmd_potential(args):
    from .interactions import effective_potential
    params, source = medium_from(args)
    r = np.linspace(args.r_min, args.r_max, args.points)
    sample = effective_potential(mhz_to_angular(args.omega), r, params)
    rows = [(ri, angular_to_mhz(v.real), angular_to_mhz(v.imag)) for ri, v in zip(sample.r, sample.value)]
    em = Emitter(args.out_dir, _metadata(args, params, source))
    path = em.csv(args.out, ["r_um", "re_Ve_MHz", "im_Ve_MHz"], rows)
    em.sidecar(path, {"omega_MHz": args.omega})


def cmd_resonances(args):
    from .interactions import resonance_detunings
    params, source = medium_from(args)
    res = resonance_detunings(params, method=args.method)
    out = {"delta0_MHz": angular_to_mhz(res.delta0), "deltaPlus_MHz": angular_to_mhz(res.delta_plus),
           "method": res.method}
    if res.broadened_delta0 is not None:
        out["broadened_delta0_MHz"] = angular_to_mhz(res.broadened_delta0)
        out["broadened_deltaPlus_MHz"] = angular_to_mhz(res.broadened_delta_plus)
    em = Emitter(args.out_dir, _metadata(args, params, source))
    em.json(args.out, out)
    print(_json(out), end="")


def _grid_pair(args, params=None):
    d = parse_range(args.delta) if args.delta is not None else np.array([angular_to_mhz(params.delta)])
    ds = (parse_range(args.deltas) if args.deltas is not None
          else np.array([angular_to_mhz(params.delta_s)]))
    if d.size == 0 or ds.size == 0:
        raise UsageError("empty map")
    return d, ds


def cmd_beta_map(args):
    from .fgr import beta_map
    d, ds = _grid_pair(args)
    params, source = medium_from(args)
    t0 = time.perf_counter()
    ckpt = str(Emitter(args.out_dir, {}).path(args.checkpoint)) if args.checkpoint else None
    res = beta_map(mhz_to_angular(d), mhz_to_angular(ds), params, method=args.method,
                   checkpoint=ckpt, workers=args.workers)
    rows = []
    for i, s in enumerate(ds):
        for j, x in enumerate(d):
            b = res.beta[i, j]
            rows.append((x, s, abs(b), b.real, b.imag, args.method))
    em = Emitter(args.out_dir, _metadata(args, params, source, time.perf_counter() - t0))
    path = em.csv(args.out, ["delta_MHz", "deltas_MHz", "abs_beta", "re_beta", "im_beta", "method"], rows)
    em.sidecar(path, {"beta_units": "rad/us um^2", "holes": [
        {"delta_MHz": d[j], "deltas_MHz": ds[i], "error": m} for i, j, m in res.holes]})
    if res.holes:
        log.warning("%d map point(s) failed; see metadata", len(res.holes))


def cmd_locus(args):
    from .fgr import beta_max_locus
    ds = parse_range(args.deltas)
    params, source = medium_from(args)
    window = None
    if args.window:
        lo, hi = (float(x) for x in args.window.split(":"))
        window = (mhz_to_angular(lo), mhz_to_angular(hi))
    t0 = time.perf_counter()
    pts = beta_max_locus(mhz_to_angular(ds), params, window=window, method=args.method)
    out = [{"deltas_MHz": angular_to_mhz(p.delta_s), "delta_star_MHz": angular_to_mhz(p.delta_star),
            "maxima_MHz": [angular_to_mhz(m) for m in p.maxima], "multimodal": p.multimodal}
           for p in pts]
    em = Emitter(args.out_dir, _metadata(args, params, source, time.perf_counter() - t0))
    path = em.text(args.out, _json(out))
    em.sidecar(path)
    print(_json(out), end="")


def cmd_simulate(args):
    from .propagation import (DensityProfile, Grid, correlation_map, g2_tau_profile,
                              solve_three, solve_two)
    params, source = medium_from(args)
    d, ds = _grid_pair(args, params)
    profile = DensityProfile.from_params(params)
    grid = Grid(args.grid) if args.grid else None
    extrap = not args.no_extrapolate
    t0 = time.perf_counter()
    if d.size > 1 or ds.size > 1:
        if args.n != 3:
            raise UsageError("map mode needs --n 3")
        if grid is None:
            raise UsageError("map mode needs an explicit --grid")
        cmap = correlation_map(mhz_to_angular(d), mhz_to_angular(ds), params, profile, grid,
                               extrapolate=extrap, workers=args.workers)
        em = Emitter(args.out_dir, _metadata(args, params, source, time.perf_counter() - t0))
        header = ["deltas_MHz \\ delta_MHz"] + [_fmt(x) for x in d]
        for name, mat in (("g2_map.csv", cmap.g2), ("g3_map.csv", cmap.g3), ("eta3_map.csv", cmap.eta3)):
            em.csv(Path(args.out).with_suffix("").as_posix() + "_" + name, header,
                   [[s] + list(row) for s, row in zip(ds, mat)])
        em.json(Path(args.out).with_suffix(".json").as_posix(), {
            "holes": [{"delta_MHz": d[j], "deltas_MHz": ds[i], "error": m} for i, j, m in cmap.holes],
            "grid_points": grid.points})
        return
    params = params.replace(delta=mhz_to_angular(float(d[0])), delta_s=mhz_to_angular(float(ds[0])))
    if args.n == 2:
        wave, res = solve_two(params, profile, grid, extrapolate=extrap)
        wave2 = wave
    elif args.n == 3:
        wave, res = solve_three(params, profile, grid, extrapolate=extrap)
        wave2 = wave.lower
    else:
        raise UsageError("--n must be 2 or 3")
    out = {"g2_0": res.g2_0, "g3_00": res.g3_00, "eta3_00": res.eta3_00,
           "convergence": res.convergence, "grid": res.grid}
    em = Emitter(args.out_dir, _metadata(args, params, source, time.perf_counter() - t0))
    if args.tau_max:
        taus = np.linspace(0.0, args.tau_max, args.tau_points)
        prof = g2_tau_profile(wave2, taus, params, profile)
        path = em.csv(Path(args.out).with_suffix(".tau.csv").as_posix(), ["tau_us", "g2"], zip(taus, prof))
        out["tau_profile"] = str(path)
    em.json(args.out, out)
    print(_json({k: out[k] for k in ("g2_0", "g3_00", "eta3_00")}), end="")


def cmd_correlate(args):
    try:
        streams = read_tags(args.input)
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from None
    block = int(round(args.block_us * 1000))
    kw = dict(bin_ns=args.bin_ns, window_ns=args.window_ns, block_ns=block)
    t0 = time.perf_counter()
    summary = correlation_summary(streams, **kw)
    g2s = {p: g2_from_tags(streams, channels=p, **kw) for p in ((1, 2), (1, 3), (2, 3))}
    g3 = g3_from_tags(streams, **kw)
    meta = _metadata(args, wall=time.perf_counter() - t0)
    meta.update(input=str(args.input), bin_ns=args.bin_ns, window_ns=args.window_ns, block_ns=block)
    em = Emitter(args.out_dir, meta)
    stem = Path(args.out).with_suffix("").as_posix()
    tau = g2s[(1, 2)].tau_ns
    rows = [[tau[k]] + sum(([g.value[k], g.stderr[k], int(g.flagged[k])] for g in g2s.values()), [])
            for k in range(tau.size)]
    em.csv(stem + "_g2.csv", ["tau_ns", "g2_12", "stderr_12", "flag_12", "g2_13", "stderr_13", "flag_13",
                              "g2_23", "stderr_23", "flag_23"], rows)
    em.csv(stem + "_g3.csv", ["tau1_ns \\ tau2_ns"] + [_fmt(t) for t in g3.tau_ns],
           [[t] + list(row) for t, row in zip(g3.tau_ns, g3.value)],
           comment=["rows: tau1 = t2 - t1, columns: tau2 = t3 - t1, left bin edges in ns"])
    em.json(stem + "_summary.json", summary)
    print(_json(summary), end="")


def cmd_synth(args):
    cfg = SynthConfig(model=args.model, rate=args.rate, group_rate=args.group_rate,
                      jitter_ns=args.jitter_ns, seed=args.seed)
    duration = int(round(args.duration_ms * 1e6))
    streams = synth_tags(cfg, duration)
    em = Emitter(args.out_dir, _metadata(args))
    path = em.path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "ttag1":
        write_tags_binary(streams, path)
    else:
        write_tags_csv(streams, path)
    em.sidecar(path, {"synth": {"model": cfg.model, "rate_per_us": cfg.rate,
                                "group_rate_per_us": cfg.group_rate, "jitter_ns": cfg.jitter_ns,
                                "duration_ns": duration},
                      "counts": {s.channel: len(s) for s in streams}})


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress):
        # subcommand copies must not overwrite values given before the subcommand
        def d(value):
            return argparse.SUPPRESS if suppress else value

        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", default=d(None),
                       help="TOML config file or bundled preset name (paper, experiment); default: paper")
        g.add_argument("--out-dir", default=d("."), help="directory for outputs (default: .)")
        g.add_argument("--workers", type=int, default=d(1), help="worker processes for maps (default: 1)")
        g.add_argument("--seed", type=int, default=d(0), help="random seed (default: 0)")
        g.add_argument("--log-level", default=d("WARNING"),
                       choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="default: WARNING")
        return g

    common = global_flags(suppress=True)

    parser = argparse.ArgumentParser(
        prog="rydloss", parents=[global_flags(suppress=False)],
        description="Rydberg-polariton three-body loss toolkit. MHz values are omega/2pi.")
    parser.add_argument("--version", action="version", version=f"rydloss {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    def add(name, func, help_, single=True):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_ + " MHz values are omega/2pi.")
        p.set_defaults(func=func)
        if single is not None:
            _add_medium_flags(p, single_detuning=single)
        return p

    p = add("scales", cmd_scales, "Derived scales (phi, r_b, OD_b) and resonance detunings as JSON.")
    p.add_argument("--out", default="scales.json", help="output JSON (default: scales.json)")

    p = add("dispersion", cmd_dispersion, "Complex polariton band structure as CSV.")
    p.add_argument("--q-max", type=float, default=None, help="momentum range in 1/um (default: 50 g/c)")
    p.add_argument("--points", type=int, default=801, help="number of momenta (default: 801)")
    p.add_argument("--out", default="dispersion.csv", help="output CSV (default: dispersion.csv)")

    p = add("potential", cmd_potential, "Effective two-body potential V_e(r) as CSV.")
    p.add_argument("--omega", type=float, default=0.0, help="pair energy omega/2pi in MHz (default: 0)")
    p.add_argument("--r-min", type=float, default=0.5, help="in um (default: 0.5)")
    p.add_argument("--r-max", type=float, default=40.0, help="in um (default: 40)")
    p.add_argument("--points", type=int, default=401, help="default: 401")
    p.add_argument("--out", default="potential.csv", help="output CSV (default: potential.csv)")

    p = add("resonances", cmd_resonances, "Resonance detunings delta_0 and delta_+ as JSON.")
    p.add_argument("--method", choices=("closed_form", "numeric_root"), default="numeric_root",
                   help="default: numeric_root")
    p.add_argument("--out", default="resonances.json", help="output JSON (default: resonances.json)")

    p = add("beta-map", cmd_beta_map, "Three-body loss rate |beta| over a detuning grid as CSV.", single=False)
    p.add_argument("--delta", required=True, help="delta/2pi range lo:hi:step in MHz")
    p.add_argument("--deltas", required=True, help="delta_s/2pi range lo:hi:step in MHz")
    p.add_argument("--method", choices=("full", "simplified", "asymptotic"), default="simplified",
                   help="default: simplified")
    p.add_argument("--checkpoint", default=None, help="JSON-lines checkpoint; finished points are reused")
    p.add_argument("--out", default="beta_map.csv", help="output CSV (default: beta_map.csv)")

    p = add("locus", cmd_locus, "Detuning delta* of maximal |beta| versus delta_s as a JSON array.",
            single=False)
    p.add_argument("--deltas", required=True, help="delta_s/2pi values lo:hi:step in MHz")
    p.add_argument("--window", default=None, help="delta/2pi search window lo:hi in MHz "
                   "(default: 0.3 to 1.7 Omega_c)")
    p.add_argument("--method", choices=("full", "simplified", "asymptotic"), default="simplified",
                   help="default: simplified")
    p.add_argument("--out", default="locus.json", help="output JSON (default: locus.json)")

    p = add("simulate", cmd_simulate, "Steady-state propagation: g2(0), g3(0,0), eta3(0,0).", single=False)
    p.add_argument("--n", type=int, choices=(2, 3), default=3, help="excitation number (default: 3)")
    p.add_argument("--delta", default=None,
                   help="delta/2pi in MHz, or lo:hi:step for a map (default: from config; paper preset: 25)")
    p.add_argument("--deltas", default=None,
                   help="delta_s/2pi in MHz, or lo:hi:step for a map (default: from config; paper preset: 0)")
    p.add_argument("--grid", type=int, default=None,
                   help="grid points M (odd); default: spacing min(r_b/12, sigma_z/60)")
    p.add_argument("--no-extrapolate", action="store_true", help="skip the Richardson coarse-grid solve")
    p.add_argument("--tau-max", type=float, default=None, help="also emit g2(tau) up to this delay in us")
    p.add_argument("--tau-points", type=int, default=101, help="default: 101")
    p.add_argument("--out", default="simulate.json", help="output JSON (default: simulate.json)")

    p = add("correlate", cmd_correlate, "g2(tau), g3(tau1, tau2) and eta3 from time tags.", single=None)
    p.add_argument("input", help="time tags: CSV 'channel,timestamp_ns' or TTAG1 binary")
    p.add_argument("--bin-ns", type=int, default=DEFAULT_BIN_NS, help=f"bin width in ns (default: {DEFAULT_BIN_NS})")
    p.add_argument("--window-ns", type=int, default=DEFAULT_WINDOW_NS,
                   help=f"half window in ns (default: {DEFAULT_WINDOW_NS})")
    p.add_argument("--block-us", type=float, default=DEFAULT_BLOCK_NS / 1000,
                   help=f"normalization block period T in us (default: {DEFAULT_BLOCK_NS // 1000})")
    p.add_argument("--out", default="correlate", help="output stem (default: correlate)")

    p = add("synth", cmd_synth, "Synthetic three-channel time tags.", single=None)
    p.add_argument("--model", choices=SYNTH_MODELS, default="poisson", help="default: poisson")
    p.add_argument("--rate", type=float, default=3.0, help="Poisson input rate per us before the split (default: 3)")
    p.add_argument("--group-rate", type=float, default=0.0, help="pair/triplet rate per us (default: 0)")
    p.add_argument("--jitter-ns", type=float, default=0.0, help="rms jitter within a group in ns (default: 0)")
    p.add_argument("--duration-ms", type=float, default=100.0, help="default: 100")
    p.add_argument("--format", choices=("csv", "ttag1"), default="csv", help="default: csv")
    p.add_argument("--out", default="tags.csv", help="output file (default: tags.csv)")
    return parser


def _diagnostic(args, exc):
    out_dir = Path(getattr(args, "out_dir", ".") or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"error": type(exc).__name__, "message": str(exc),
                   "command": getattr(args, "command", None),
                   "argv": list(getattr(args, "_argv", []))}
        for attr in ("location", "field"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        Emitter(out_dir, {}).text("error.json", _json(payload))
    except OSError:
        pass


_RANGE_FLAGS = ("--delta", "--deltas", "--window")


def _join_negative_ranges(argv):
    """Let ``--deltas -3:3:0.5`` through: argparse would read the value as an option."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _RANGE_FLAGS and i + 1 < len(argv) and argv[i + 1][:1] == "-" \
                and argv[i + 1][1:2].isdigit() or (tok in _RANGE_FLAGS and i + 1 < len(argv)
                                                    and argv[i + 1][:2] == "-."):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def dispatch(argv=None) -> int:
    argv = _join_negative_ranges(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    args._argv = argv
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"rydloss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RydlossError as exc:
        print(f"rydloss {args.command}: numerical failure: {exc}", file=sys.stderr)
        _diagnostic(args, exc)
        return EXIT_NUMERICAL
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"rydloss {args.command}: numerical failure: {exc}", file=sys.stderr)
        _diagnostic(args, exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"rydloss {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
