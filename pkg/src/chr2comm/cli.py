"""Command-line entry point.

Subcommands: ``table`` (posterior table CSV), ``pe-theory`` (exact error
probability), ``simulate`` (one Monte Carlo row), ``sweep`` (grid CSV), and
``validate`` (config/model invariant report).  Configs are flat ``key =
value`` text; bracketed lists on the sweepable keys (n, dt, receptors, snr,
lambda) expand to a Cartesian grid in that key order.  Every CSV opens with a
comment line carrying the manifest hash and master seed, and reruns with the
same seed are byte-identical regardless of --threads.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from io import StringIO
from pathlib import Path

from . import __version__
from .analysis import (
    ExperimentConfig,
    exact_error_probability,
    run_point,
    sweep,
    write_sweep_csv,
)
from .detector import posterior_table, write_posterior_table_csv
from .errors import (
    Chr2CommError,
    InvalidStep,
    NegativeIntensity,
    NegativeRate,
    NoiseUnsupported,
    ParseError,
    ValidationError,
)
from .kinetics import RateParams, steady_state

_VALIDATION_FAILURES = (
    ParseError, ValidationError, NegativeRate, NegativeIntensity, InvalidStep, NoiseUnsupported,
)

_DEFAULTS = {
    "q12_per_lumen": 5000.0,
    "q23": 50.0,
    "q31": 17.0,
    "x_on": 1.0,
    "dt": 1e-6,
    "n": 3,
    "receptors": 1,
    "prior": 0.5,
    "mode": "exact",
    "init": "steady_avg",
    "init_pi": None,
    "tie": "coin",
    "noise": None,
    "lambda": None,
    "snr": None,
    "trials": 100_000,
    "seed": 0,
    "readout": "counts",
}

_SWEEPABLE = ("n", "dt", "receptors", "snr", "lambda")
_STRING_KEYS = {"mode", "init", "tie", "noise", "readout"}
_INT_KEYS = {"n", "receptors", "trials", "seed"}


def _parse_scalar(text: str, key: str, where: str):
    if key in _STRING_KEYS:
        return text
    try:
        if key in _INT_KEYS:
            return int(text)
        return float(text)
    except ValueError:
        raise ParseError(f"{where}: cannot parse value {text!r} for key '{key}'") from None


def _parse_value(text: str, key: str, where: str):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ParseError(f"{where}: unterminated list for key '{key}'")
        items = [t.strip() for t in text[1:-1].split(",") if t.strip()]
        if not items:
            raise ParseError(f"{where}: empty list for key '{key}'")
        return [_parse_scalar(t, key, where) for t in items]
    return _parse_scalar(text, key, where)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key=value parser; '#' starts a comment, '[a, b]' is a list."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        where = f"{source}:{lineno}"
        if key not in _DEFAULTS:
            raise ValidationError(f"{key}: unknown config key")
        if key == "init_pi":
            v = _parse_value(value, "prior", where)  # three floats
            raw[key] = v if isinstance(v, list) else [v]
            continue
        raw[key] = _parse_value(value, key, where)
    return raw


def resolve_configs(raw: dict) -> tuple[list[ExperimentConfig], list[str]]:
    """Expand a parsed key-value mapping into the ordered config grid."""
    kv = dict(_DEFAULTS)
    kv.update(raw)

    for key, value in kv.items():
        if isinstance(value, list) and key not in _SWEEPABLE and key != "init_pi":
            raise ValidationError(f"{key}: lists are only allowed on {_SWEEPABLE}")

    noise = kv["noise"]
    if kv["snr"] is not None and kv["lambda"] is not None:
        raise ValidationError("snr: give either snr or lambda, not both")
    has_noise_scale = kv["snr"] is not None or kv["lambda"] is not None
    if noise is None:
        noise = "poisson" if has_noise_scale else "off"
    if noise not in ("off", "poisson"):
        raise ValidationError(f"noise: must be 'off' or 'poisson', got {noise!r}")
    if noise == "off" and has_noise_scale:
        raise ValidationError("noise: 'off' conflicts with an snr/lambda setting")
    if noise == "poisson" and not has_noise_scale:
        raise ValidationError("noise: 'poisson' needs an snr or lambda value")

    def aslist(key):
        v = kv[key]
        return v if isinstance(v, list) else [v]

    lam_key = "snr" if kv["snr"] is not None else "lambda"
    lam_values = aslist(lam_key) if noise == "poisson" else [None]
    swept_keys = [k for k in ("n", "dt", "receptors") if isinstance(kv[k], list)]
    if noise == "poisson" and isinstance(kv[lam_key], list):
        swept_keys.append(lam_key)

    params = RateParams(kv["q12_per_lumen"], kv["q23"], kv["q31"])
    custom_init = tuple(kv["init_pi"]) if kv["init_pi"] is not None else None

    configs, labels = [], []
    for n in aslist("n"):
        for dt in aslist("dt"):
            for rec in aslist("receptors"):
                for lam_raw in lam_values:
                    if lam_raw is None:
                        lam = None
                    else:
                        lam = float(lam_raw) ** 2 if lam_key == "snr" else float(lam_raw)
                        if lam < 0:
                            raise ValidationError(f"{lam_key}: must be nonnegative, got {lam_raw!r}")
                    cfg = ExperimentConfig(
                        params=params,
                        x_on=kv["x_on"],
                        dt=dt,
                        n_obs=n,
                        n_receptors=rec,
                        prior=kv["prior"],
                        mode=kv["mode"],
                        init_mode=kv["init"],
                        custom_init=custom_init,
                        tie_rule=kv["tie"],
                        noise_lambda=lam,
                        trials=kv["trials"],
                        seed=kv["seed"],
                        binary_readout=(kv["readout"] == "binary"),
                    )
                    point = {"n": n, "dt": dt, "receptors": rec, lam_key: lam_raw}
                    labels.append(";".join(f"{k}={point[k]}" for k in swept_keys))
                    configs.append(cfg)
    return configs, labels


def load_config(path: str | None, seed: int | None = None, trials: int | None = None):
    """Read and resolve a config file (missing path means all defaults)."""
    if path is None:
        raw = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ParseError(f"{path}: config file not found")
        raw = parse_config_text(p.read_text(), source=path)
    if seed is not None:
        raw["seed"] = seed
    if trials is not None:
        raw["trials"] = trials
    return resolve_configs(raw)


def _manifest(command: str, configs: list[ExperimentConfig]):
    payload = {
        "tool": "chr2comm",
        "version": __version__,
        "command": command,
        "seed": configs[0].seed if configs else 0,
        "configs": [asdict(c) for c in configs],
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    line = f"# manifest={digest[:16]} seed={payload['seed']} version={__version__}"
    return line, payload, digest


def _emit(text: str, out: str | None, payload: dict, digest: str, elapsed: float) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text)
    sidecar = dict(payload)
    sidecar["manifest"] = digest
    sidecar["output"] = out
    sidecar["elapsed_s"] = elapsed  # timing only; excluded from the hashed payload
    Path(out + ".manifest.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def _single_config(configs, command):
    if len(configs) != 1:
        raise ValidationError(
            f"{command} needs a single config point, got a grid of {len(configs)}; use sweep"
        )
    return configs[0]


def _cmd_table(args, configs, labels):
    cfg = _single_config(configs, "table")
    rows = posterior_table(cfg.build_model(), cfg.detector_config(), cfg.n_obs)
    line, payload, digest = _manifest("table", configs)
    buf = StringIO()
    buf.write(line + "\n")
    write_posterior_table_csv(rows, buf)
    return buf.getvalue(), payload, digest


def _cmd_pe_theory(args, configs, labels):
    line, payload, digest = _manifest("pe-theory", configs)
    buf = StringIO()
    for cfg in configs:
        buf.write("%.17g\n" % exact_error_probability(cfg))
    return buf.getvalue(), payload, digest


def _cmd_simulate(args, configs, labels):
    cfg = _single_config(configs, "simulate")
    row = run_point(cfg, swept=labels[0])
    line, payload, digest = _manifest("simulate", configs)
    buf = StringIO()
    write_sweep_csv([row], buf, manifest_line=line)
    return buf.getvalue(), payload, digest


def _cmd_sweep(args, configs, labels):
    rows = sweep(configs, swept_labels=labels, threads=args.threads)
    line, payload, digest = _manifest("sweep", configs)
    buf = StringIO()
    write_sweep_csv(rows, buf, manifest_line=line)
    return buf.getvalue(), payload, digest


def _cmd_validate(args, configs, labels):
    lines = []
    ok = True
    for i, cfg in enumerate(configs):
        tag = f"point {i}"
        try:
            model = cfg.build_model()
            pc = model.combined_matrix(cfg.x_on)
            dev = abs(pc.sum(axis=1) - 1.0).max()
            if dev <= 1e-12:
                lines.append(f"ok: {tag}: combined matrix row-stochastic (max dev {dev:.2e})")
            else:
                ok = False
                lines.append(f"fail: {tag}: combined matrix rows off by {dev:.2e}")
            det = cfg.detector_config()
            from .detector import resolve_initial

            init = resolve_initial(model, det)
            idev = abs(init.sum() - 1.0)
            if idev <= 1e-12 and init.min() >= 0:
                lines.append(f"ok: {tag}: initial distribution normalized (dev {idev:.2e})")
            else:
                ok = False
                lines.append(f"fail: {tag}: initial distribution invalid (dev {idev:.2e})")
            x_avg = cfg.prior * cfg.x_on
            pi = steady_state(model.single_matrix(x_avg))
            resid = abs(pi @ model.single_matrix(x_avg).p - pi).max()
            if resid <= 1e-10:
                lines.append(f"ok: {tag}: steady state residual {resid:.2e}")
            else:
                ok = False
                lines.append(f"fail: {tag}: steady state residual {resid:.2e}")
        except Chr2CommError as exc:
            ok = False
            lines.append(f"fail: {tag}: {type(exc).__name__}: {exc}")
    lines.append("result: " + ("ok" if ok else "fail"))
    return "\n".join(lines) + "\n", ok


_COMMANDS = {
    "table": _cmd_table,
    "pe-theory": _cmd_pe_theory,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file (key = value lines)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--trials", type=int, help="Monte Carlo trials override")
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweeps; affects speed only, never results")
    parser = argparse.ArgumentParser(prog="chr2comm",
                                     description="Light-gated receptor link simulator")
    parser.add_argument("--version", action="version", version=f"chr2comm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("table", parents=[common], help="posterior table CSV")
    sub.add_parser("pe-theory", parents=[common], help="exact error probability")
    sub.add_parser("simulate", parents=[common], help="one Monte Carlo result row")
    sub.add_parser("sweep", parents=[common], help="full parameter-grid CSV")
    sub.add_parser("validate", parents=[common], help="config and model invariant report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        configs, labels = load_config(args.config, seed=args.seed, trials=args.trials)
        if args.command == "validate":
            text, ok = _cmd_validate(args, configs, labels)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0 if ok else 1
        text, payload, digest = _COMMANDS[args.command](args, configs, labels)
        _emit(text, args.out, payload, digest, time.perf_counter() - started)
        return 0
    except _VALIDATION_FAILURES as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Chr2CommError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
