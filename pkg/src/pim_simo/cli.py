"""Command-line front end.

Subcommands: `rate` (code figures for a policy), `sweep` (Monte Carlo SER
along one axis, CSV + JSON out), `required-snr` (bisection search per
antenna count), `validate` (small-scale invariant suite).  Experiments are
described by INI-style config files; command-line flags override config
values.  The CLI computes nothing itself; it parses, delegates to the
library, and writes files.

Exit codes: 0 success, 1 validation failure, 2 malformed configuration.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import detect
from ._version import __version__
from .channel import exponential_correlation, hermitian_eig
from .codebook import (
    PartitionPolicy,
    best_policy,
    build_amplitude_set,
    cardinality,
    code_rate,
    entropy_limit,
    se_upper_bound,
    spectral_efficiency,
    stirling_bounds,
    uniform_policy,
)
from .detect import (
    DETECTOR_KINDS,
    brute_force_ml,
    isotropic_ml,
    ml_metric_table,
    trellis_state_count,
    viterbi_ml,
)
from .errors import ConfigError, SizeLimitError
from .sim import (
    ExperimentSpec,
    axis_value_label,
    config_hash,
    required_snr,
    run_ser,
    sweep,
    trial_rng,
    write_summary_json,
    write_sweep_csv,
)

SEED_ENV_VAR = "PIM_SIMO_SEED"

_SCHEMA = {
    "code": {"l", "k", "policy", "uniform"},
    "channel": {"n", "rho"},
    "sweep": {"axis", "values", "detectors", "snr_db"},
    "sim": {"seed", "min_errors", "max_trials"},
    "required": {"target_ser", "antennas", "tol_db", "lo_db", "hi_db"},
    "output": {"directory", "formats"},
}


def _anchored(path: Path, text: str, needle: str, message: str) -> ConfigError:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(needle):
            return ConfigError(f"{path}:{lineno}: {message}")
    return ConfigError(f"{path}: {message}")


def load_config(path: str | Path) -> configparser.ConfigParser:
    """Parse and schema-check a run configuration.  Unknown sections or
    keys are rejected with the offending line in the message."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cfg.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    for section in cfg.sections():
        if section not in _SCHEMA:
            raise _anchored(path, text, f"[{section}]", f"unknown section [{section}]")
        for key in cfg[section]:
            if key not in _SCHEMA[section]:
                raise _anchored(
                    path, text, key, f"unknown key {key!r} in section [{section}]"
                )
    return cfg


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"expected integers, got {text!r}") from e


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"expected numbers, got {text!r}") from e


def _policy_from_config(cfg: configparser.ConfigParser) -> PartitionPolicy:
    code = cfg["code"] if cfg.has_section("code") else {}
    policy_text = code.get("policy")
    if policy_text:
        try:
            policy = PartitionPolicy(_parse_ints(policy_text))
        except ValueError as e:
            raise ConfigError(f"bad policy {policy_text!r}: {e}") from e
        if "l" in code and int(code["l"]) != policy.L:
            raise ConfigError(
                f"policy {policy_text!r} has {policy.L} levels, config says L={code['l']}"
            )
        return policy
    if "k" in code:
        if not cfg.getboolean("code", "uniform", fallback=False):
            raise ConfigError("a K without a policy requires uniform = true")
        if "l" not in code:
            raise ConfigError("uniform policy needs both K and L")
        try:
            return uniform_policy(int(code["k"]), int(code["l"]))
        except ValueError as e:
            raise ConfigError(str(e)) from e
    raise ConfigError("config must give [code] policy, or [code] K with uniform = true")


def _resolve_seed(args, cfg: configparser.ConfigParser | None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if cfg is not None and cfg.has_option("sim", "seed"):
        try:
            return int(cfg["sim"]["seed"])
        except ValueError as e:
            raise ConfigError(f"bad seed {cfg['sim']['seed']!r}") from e
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"bad {SEED_ENV_VAR} value {env!r}") from e
    return 0


def _experiment_from_config(
    args, cfg: configparser.ConfigParser, need_snr: bool = True
) -> ExperimentSpec:
    policy = _policy_from_config(cfg)
    if not cfg.has_section("channel") or "n" not in cfg["channel"]:
        raise ConfigError("config must give [channel] N")
    if args.detectors:
        detectors = tuple(tok for tok in args.detectors.replace(",", " ").split())
    elif cfg.has_option("sweep", "detectors"):
        detectors = tuple(cfg["sweep"]["detectors"].replace(",", " ").split())
    else:
        raise ConfigError("no detectors given ([sweep] detectors or --detectors)")
    if not detectors:
        raise ConfigError("detector list is empty")
    has_snr = cfg.has_option("sweep", "snr_db")
    if need_snr and not has_snr:
        raise ConfigError("config must give [sweep] snr_db")
    # callers that derive their own grid (required-snr; an snr-axis sweep
    # driven by [sweep] values) accept a placeholder operating point
    snr_db = _parse_floats(cfg["sweep"]["snr_db"]) if has_snr else (0.0,)
    try:
        return ExperimentSpec(
            policy=policy,
            L=policy.L,
            N=cfg.getint("channel", "n"),
            rho=cfg.getfloat("channel", "rho", fallback=0.0),
            snr_db=snr_db,
            detectors=detectors,
            min_errors=cfg.getint("sim", "min_errors", fallback=200),
            max_trials=cfg.getint("sim", "max_trials", fallback=100_000),
            seed=_resolve_seed(args, cfg),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _outdir(args, cfg: configparser.ConfigParser | None) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif cfg is not None and cfg.has_option("output", "directory"):
        out = Path(cfg["output"]["directory"])
    else:
        out = Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(cfg: configparser.ConfigParser | None) -> set[str]:
    if cfg is None or not cfg.has_option("output", "formats"):
        return {"csv", "json"}
    formats = set(cfg["output"]["formats"].replace(",", " ").split())
    unknown = formats - {"csv", "json"}
    if unknown:
        raise ConfigError(f"unknown output formats: {', '.join(sorted(unknown))}")
    return formats


# ---------------------------------------------------------------- rate


def _rate_policy(args) -> PartitionPolicy:
    if args.policy:
        policy = PartitionPolicy(_parse_ints(args.policy))
        if args.L is not None and args.L != policy.L:
            raise ConfigError(
                f"--policy has {policy.L} levels but --L says {args.L}"
            )
        if args.K is not None and args.K != policy.K:
            raise ConfigError(f"--policy sums to {policy.K} but --K says {args.K}")
        return policy
    if args.uniform:
        if args.K is None or args.L is None:
            raise ConfigError("--uniform needs both --K and --L")
        return uniform_policy(args.K, args.L)
    raise ConfigError("give either --policy, or --K/--L with --uniform")


def cmd_rate(args) -> int:
    try:
        policy = _rate_policy(args)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    se = spectral_efficiency(policy)
    rate = code_rate(policy) if policy.L >= 2 else None
    try:
        upper = se_upper_bound(policy)
    except ValueError:
        upper = None
    report = {
        "policy": list(policy.multiplicities),
        "K": policy.K,
        "L": policy.L,
        "codewords": str(cardinality(policy)),
        "spectral_efficiency_bpcu": se,
        "code_rate": rate,
        "entropy_limit_bpcu": entropy_limit(policy),
        "se_upper_bound_bpcu": upper,
        "trellis_states": trellis_state_count(policy),
    }
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    fmt = lambda x: "n/a" if x is None else f"{x:.6f}"
    print(f"policy                    {'-'.join(str(m) for m in policy.multiplicities)}")
    print(f"subcarriers K             {policy.K}")
    print(f"levels L                  {policy.L}")
    print(f"codewords                 {report['codewords']}")
    print(f"spectral efficiency bpcu  {se:.6f}")
    print(f"code rate                 {fmt(rate)}")
    print(f"entropy limit bpcu        {report['entropy_limit_bpcu']:.6f}")
    print(f"se upper bound bpcu       {fmt(upper)}")
    print(f"trellis states            {report['trellis_states']}")
    return 0


# ---------------------------------------------------------------- sweep


def _axis_values(cfg: configparser.ConfigParser, axis: str, spec: ExperimentSpec):
    text = cfg["sweep"].get("values") if cfg.has_section("sweep") else None
    if axis == "snr":
        return _parse_floats(text) if text else spec.snr_db
    if text is None:
        raise ConfigError(f"axis {axis!r} needs [sweep] values")
    if axis == "antennas":
        return _parse_ints(text)
    if axis == "correlation":
        return _parse_floats(text)
    try:
        return tuple(_parse_ints(part) for part in text.split(";") if part.strip())
    except ValueError as e:
        raise ConfigError(f"bad policy list {text!r}") from e


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs --config")
    cfg = load_config(args.config)
    spec = _experiment_from_config(args, cfg, need_snr=False)
    axis = cfg.get("sweep", "axis", fallback="snr")
    has_snr = cfg.has_option("sweep", "snr_db")
    has_values = cfg.has_option("sweep", "values")
    if axis == "snr":
        if not has_snr and not has_values:
            raise ConfigError("snr axis needs [sweep] snr_db or [sweep] values")
    elif not has_snr:
        raise ConfigError(f"axis {axis!r} needs [sweep] snr_db for the operating point")
    values = _axis_values(cfg, axis, spec)
    if axis == "snr" and has_values:
        spec = dataclasses.replace(spec, snr_db=tuple(values))
    result = sweep(spec, axis, values, threads=args.threads)
    outdir = _outdir(args, cfg)
    formats = _formats(cfg)
    written = []
    if "csv" in formats:
        csv_path = outdir / f"{axis}.csv"
        write_sweep_csv(result, csv_path)
        written.append(str(csv_path))
    if "json" in formats:
        json_path = outdir / "summary.json"
        write_summary_json(result, spec, json_path)
        written.append(str(json_path))
    print(f"sweep {axis}: {len(result.values)} points x {len(spec.detectors)} detectors"
          f" -> {', '.join(written)}")
    return 0


# ---------------------------------------------------------------- required-snr


def cmd_required_snr(args) -> int:
    if not args.config:
        raise ConfigError("required-snr needs --config")
    cfg = load_config(args.config)
    spec = _experiment_from_config(args, cfg, need_snr=False)
    if not cfg.has_section("required") or "target_ser" not in cfg["required"]:
        raise ConfigError("config must give [required] target_ser")
    target = cfg.getfloat("required", "target_ser")
    grid = (
        _parse_ints(cfg["required"]["antennas"])
        if cfg.has_option("required", "antennas")
        else (spec.N,)
    )
    tol_db = cfg.getfloat("required", "tol_db", fallback=0.25)
    lo_db = cfg.getfloat("required", "lo_db", fallback=-5.0)
    hi_db = cfg.getfloat("required", "hi_db", fallback=60.0)
    outdir = _outdir(args, cfg)
    lines = [
        f"# config={config_hash(spec, 'antennas', grid)} seed={spec.seed} "
        f"target_ser={target:g} version={__version__}",
        "antennas,detector,required_snr_db",
    ]
    for n in grid:
        spec_n = dataclasses.replace(spec, N=int(n))
        for kind in spec.detectors:
            snr = required_snr(
                spec_n, kind, target, tol_db=tol_db,
                lo_db=lo_db, hi_db=hi_db, threads=args.threads,
            )
            cell = "unreachable" if snr is None else f"{snr:.4f}"
            lines.append(f"{n},{kind},{cell}")
    path = outdir / "required_snr.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"required-snr: {len(grid)} antenna counts x {len(spec.detectors)} detectors"
          f" -> {path}")
    return 0


# ---------------------------------------------------------------- validate


def _check_sorting_equivalence(seed: int) -> str | None:
    policy = PartitionPolicy((2, 2, 1, 1))
    amps = build_amplitude_set(4)
    eig = hermitian_eig(exponential_correlation(4, 0.0))
    sigma2 = 0.1
    from .channel import ChannelSpec, random_block

    chspec = ChannelSpec(eig=eig, sigma2=sigma2)
    for t in range(300):
        block = random_block(chspec, policy, amps, trial_rng(seed, t))
        table = ml_metric_table(block, eig, sigma2, amps)
        a = isotropic_ml(block, sigma2, policy, amps).codeword.level_indices
        b = brute_force_ml(table, policy, amps).codeword.level_indices
        if not np.array_equal(a, b):
            return f"sorting and exhaustive ML disagree on trial {t}"
    return None


def _check_trellis_equivalence(seed: int) -> str | None:
    policy = PartitionPolicy((2, 2, 2, 2))
    amps = build_amplitude_set(4)
    rng = trial_rng(seed, 12345)
    from .detect import MetricTable

    for t in range(200):
        table = MetricTable(rng.standard_normal((8, 4)))
        a = brute_force_ml(table, policy, amps)
        b = viterbi_ml(table, policy, amps)
        if not np.array_equal(a.codeword.level_indices, b.codeword.level_indices):
            return f"trellis and exhaustive ML decisions differ on table {t}"
        if abs(a.cost - b.cost) > 1e-9:
            return f"trellis and exhaustive ML costs differ on table {t}"
    return None


def _check_unbiasedness(seed: int) -> str | None:
    N, rho, sigma2, draws = 32, 0.7, 0.1, 20_000
    eig = hermitian_eig(exponential_correlation(N, rho))
    amps = build_amplitude_set(4)
    rng = trial_rng(seed, 777)
    for kind in ("ed", "hsnr", "bque-genie"):
        for eps in amps.energies:
            if kind == "ed":
                diag = detect.weights_ed(eig).diag
            elif kind == "hsnr":
                diag = detect.weights_hsnr(eig).diag
            else:
                diag = detect.weights_abque(eig, sigma2, float(eps)).diag
            var = eps * eig.gamma + sigma2
            w = rng.standard_normal((2, draws, N))
            p = (w[0] ** 2 + w[1] ** 2) * (var / 2.0)
            est = p @ diag - sigma2 * diag.sum()
            margin = 4.5 * est.std(ddof=1) / math.sqrt(draws)
            if abs(est.mean() - eps) > margin:
                return (
                    f"{kind} estimate biased at energy {eps:.4f}: "
                    f"mean {est.mean():.5f}, margin {margin:.5f}"
                )
    return None


def _check_weight_constraint(seed: int) -> str | None:
    for rho in (0.0, 0.7, 0.99):
        eig = hermitian_eig(exponential_correlation(32, rho))
        for name, wm in (
            ("ed", detect.weights_ed(eig)),
            ("hsnr", detect.weights_hsnr(eig)),
            ("abque", detect.weights_abque(eig, 0.05, 1.3)),
        ):
            err = abs(float(wm.diag @ eig.gamma) - 1.0)
            if err > 1e-9:
                return f"{name} weight constraint off by {err:.2e} at rho={rho}"
    return None


def _check_rate_bounds(seed: int) -> str | None:
    for alpha in range(1, 171):
        low, up = stirling_bounds(alpha)
        exact = math.lgamma(alpha + 1) / math.log(2)
        if not low < exact < up:
            return f"log-factorial bounds fail at alpha={alpha}"
    for L in (2, 3, 4):
        for K in range(2 * L, 65, L):
            policy = uniform_policy(K, L)
            se = spectral_efficiency(policy)
            if se >= entropy_limit(policy):
                return f"SE exceeds the entropy limit at K={K}, L={L}"
            if se_upper_bound(policy) <= se:
                return f"SE upper bound not above SE at K={K}, L={L}"
    if best_policy(12, 3).multiplicities != (4, 4, 4):
        return "best_policy(12, 3) is not uniform"
    return None


def cmd_validate(args) -> int:
    seed = _resolve_seed(args, None)
    checks = [
        ("sorting-ml-equals-exhaustive-ml", _check_sorting_equivalence),
        ("trellis-ml-equals-exhaustive-ml", _check_trellis_equivalence),
        ("quadratic-estimators-unbiased", _check_unbiasedness),
        ("weight-constraint", _check_weight_constraint),
        ("rate-bounds", _check_rate_bounds),
    ]
    failures = 0
    for name, fn in checks:
        problem = fn(seed)
        if problem is None:
            print(f"ok   {name}")
        else:
            print(f"FAIL {name}: {problem}")
            failures += 1
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


# ---------------------------------------------------------------- entry


def _seed_type(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="run configuration file")
    shared.add_argument("--out", metavar="DIR", help="output directory")
    shared.add_argument("--seed", metavar="U64", type=_seed_type, default=None,
                        help=f"master seed (fallback: ${SEED_ENV_VAR}, then 0)")
    shared.add_argument("--threads", metavar="N", type=int, default=1,
                        help="worker threads for trials (results do not depend on this)")
    shared.add_argument("--detectors", metavar="LIST", default=None,
                        help="comma-separated detector kinds, overriding the config")

    parser = argparse.ArgumentParser(
        prog="pim-simo",
        description="Permutational index modulation over a noncoherent massive "
                    "SIMO channel: code figures and Monte Carlo SER experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_rate = sub.add_parser("rate", parents=[shared],
                            help="combinatorial and rate figures for one policy")
    p_rate.add_argument("--K", type=int, default=None, help="subcarrier count")
    p_rate.add_argument("--L", type=int, default=None, help="amplitude level count")
    p_rate.add_argument("--uniform", action="store_true",
                        help="use the uniform policy K_l = K/L")
    p_rate.add_argument("--policy", default=None,
                        help="explicit multiplicities, e.g. 12,9,6,3")
    p_rate.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p_rate.set_defaults(func=cmd_rate)

    p_sweep = sub.add_parser("sweep", parents=[shared],
                             help="SER sweep along one axis from a config file")
    p_sweep.set_defaults(func=cmd_sweep)

    p_req = sub.add_parser("required-snr", parents=[shared],
                           help="SNR needed to hit a target SER, per antenna count")
    p_req.set_defaults(func=cmd_required_snr)

    p_val = sub.add_parser("validate", parents=[shared],
                           help="run the cross-module invariant checks")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SizeLimitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
