"""Command-line driver: config validation, experiment dispatch, export.

Configs are flat INI-style text (key = value under sections); unknown keys
are rejected so a manifest diff always means a semantic change.  Every run
writes results.csv, report.json and manifest.txt into the output directory
and is bit-reproducible from (config, seed).
"""

import argparse
import configparser
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__, brownian, delta_process, harness
from .errors import DegenerateRatioError
from .lattice_walk import StepLaw
from .scenery import SceneryLaw
from .simkit import derive_stream, write_manifest

__all__ = ["main", "validate_config", "run", "export_results", "ExperimentConfig"]


_LAW_ALIASES = {
    "simple": {-1: Fraction(1, 2), 1: Fraction(1, 2)},
    "rademacher": {-1: Fraction(1, 2), 1: Fraction(1, 2)},
    "lazy": {-1: Fraction(1, 4), 0: Fraction(1, 2), 1: Fraction(1, 4)},
}

# every subcommand accepts [run]; law/param keys are checked per subcommand
_COMMON_RUN_KEYS = {"seed", "out", "replicas"}
_SCHEMA = {
    "analyze-law": {"laws": {"scenery"}, "params": set()},
    "oracle": {"laws": {"step", "scenery"}, "params": {"times", "n_max"}},
    "return-curve": {
        "laws": {"step", "scenery"},
        "params": {"n_list", "k", "t_ratios", "scenery_draws"},
    },
    "counting-moments": {"laws": {"step", "scenery"}, "params": {"n_list", "k"}},
    "gram": {"laws": {"step"}, "params": {"n", "t_list", "fineness"}},
    "estimate-c": {"laws": set(), "params": {"t_list", "fineness"}},
    "besq-check": {"laws": set(), "params": {"y", "dt", "draws"}},
    "ray-knight": {"laws": set(), "params": {"level", "fineness", "offset"}},
    "delta-localtime": {"laws": set(), "params": {"eps", "t", "fineness", "dt"}},
    "scaling-test": {"laws": set(), "params": {"t", "eps", "fineness", "dt"}},
    "correlation-ratio": {
        "laws": {"step", "scenery"},
        "params": {"n", "t_ratio", "fineness"},
    },
    "boxcount": {"laws": set(), "params": {"scales", "fineness", "dt", "paths"}},
}

_DEFAULTS = {
    "seed": "20240801",
    "replicas": "1000",
    "out": "out",
}


@dataclass
class ExperimentConfig:
    """Validated, fully-resolved experiment description."""

    subcommand: str
    step: StepLaw | None
    scenery: SceneryLaw | None
    params: dict
    seed: int
    replicas: int
    out_dir: str
    allow_inadmissible: bool = False
    derived: dict = field(default_factory=dict)

    def snapshot(self):
        snap = {"subcommand": self.subcommand, "seed": str(self.seed),
                "replicas": str(self.replicas)}
        for key, value in sorted(self.params.items()):
            snap[f"params.{key}"] = str(value)
        if self.step:
            snap["laws.step"] = _law_to_text(self.step)
        if self.scenery:
            snap["laws.scenery"] = _law_to_text(self.scenery)
        for key, value in sorted(self.derived.items()):
            snap[f"derived.{key}"] = str(value)
        return snap


def _law_to_text(law):
    return ",".join(f"{x}:{p}" for x, p in zip(law.support, law.probs))


def _parse_law_text(text):
    text = text.strip()
    if text in _LAW_ALIASES:
        return dict(_LAW_ALIASES[text])
    pmf = {}
    for part in text.split(","):
        site, _, prob = part.partition(":")
        if not prob:
            raise ValueError(f"bad law atom {part!r}; expected site:prob")
        pmf[int(site.strip())] = Fraction(prob.strip())
    return pmf


def _parse_int_list(text):
    return [int(tok) for tok in text.replace(",", " ").split()]


def _parse_float_list(text):
    return [float(Fraction(tok)) for tok in text.replace(",", " ").split()]


def validate_config(path, overrides=None):
    """Parse and validate a config file.

    Returns an ExperimentConfig, or a list of error strings (each naming
    the offending field and constraint) if anything is invalid.
    """
    errors = []
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        return [f"config: unreadable or malformed ({exc})"]

    if not parser.has_section("experiment") or "subcommand" not in parser["experiment"]:
        return ["experiment.subcommand: missing"]
    sub = parser["experiment"]["subcommand"].strip()
    if sub not in _SCHEMA:
        return [f"experiment.subcommand: unknown subcommand {sub!r}"]
    schema = _SCHEMA[sub]

    for extra in set(parser["experiment"]) - {"subcommand"}:
        errors.append(f"experiment.{extra}: unknown key")
    for section in parser.sections():
        if section == "experiment":
            continue
        if section not in ("laws", "params", "run"):
            errors.append(f"{section}: unknown section")
            continue
        allowed = (
            schema["laws"] if section == "laws"
            else schema["params"] if section == "params"
            else _COMMON_RUN_KEYS
        )
        for key in parser[section]:
            if key not in allowed:
                errors.append(f"{section}.{key}: unknown key for {sub}")

    def get(section, key, default=None):
        if parser.has_section(section) and key in parser[section]:
            return parser[section][key]
        return default

    step = scenery = None
    if "step" in schema["laws"]:
        try:
            step = StepLaw.from_dict(_parse_law_text(get("laws", "step", "simple")))
        except (ValueError, ZeroDivisionError) as exc:
            errors.append(f"laws.step: {exc}")
    if "scenery" in schema["laws"]:
        try:
            scenery = SceneryLaw.from_dict(
                _parse_law_text(get("laws", "scenery", "rademacher"))
            )
        except (ValueError, AssertionError, ZeroDivisionError) as exc:
            errors.append(f"laws.scenery: {exc}")

    overrides = overrides or {}
    try:
        seed = int(overrides.get("seed") or get("run", "seed", _DEFAULTS["seed"]))
    except ValueError:
        errors.append("run.seed: not an integer")
        seed = 0
    try:
        replicas = int(
            overrides.get("replicas") or get("run", "replicas", _DEFAULTS["replicas"])
        )
        if replicas <= 0:
            errors.append("run.replicas: must be positive")
    except ValueError:
        errors.append("run.replicas: not an integer")
        replicas = 1
    out_dir = overrides.get("out") or get("run", "out", _DEFAULTS["out"])
    allow_inadmissible = bool(overrides.get("allow_inadmissible", False))

    params = {}
    raw_params = dict(parser["params"]) if parser.has_section("params") else {}
    try:
        params = _resolve_params(sub, raw_params)
    except ValueError as exc:
        errors.append(str(exc))

    derived = {}
    if scenery is not None:
        derived.update(
            {"sigma2": scenery.sigma2, "d": scenery.d, "d0": scenery.d0}
        )
        if sub in ("return-curve", "counting-moments", "oracle") and not allow_inadmissible:
            for n in params.get("n_list", []) or []:
                if n % scenery.d0:
                    errors.append(
                        f"params.n_list: n={n} violates the d0-divisibility "
                        f"constraint (d0={scenery.d0}); inadmissible times have "
                        "probability exactly 0 (pass --allow-inadmissible to force)"
                    )
                    break
    if step is not None:
        derived["step_variance"] = step.variance

    if errors:
        return errors
    return ExperimentConfig(
        subcommand=sub,
        step=step,
        scenery=scenery,
        params=params,
        seed=seed,
        replicas=replicas,
        out_dir=out_dir,
        allow_inadmissible=allow_inadmissible,
        derived=derived,
    )


def _resolve_params(sub, raw):
    params = {}
    def want(key):
        return key in _SCHEMA[sub]["params"]

    if want("n_list"):
        params["n_list"] = _parse_int_list(raw.get("n_list", "1024 2048 4096"))
    if want("times") and "times" in raw:
        params["times"] = _parse_int_list(raw["times"])
    if want("n_max"):
        params["n_max"] = int(raw.get("n_max", "8"))
    if want("k"):
        params["k"] = int(raw.get("k", "1"))
    if want("t_ratios") and "t_ratios" in raw:
        params["t_ratios"] = _parse_float_list(raw["t_ratios"])
    if want("t_list"):
        params["t_list"] = _parse_float_list(raw.get("t_list", "1.0"))
    if want("fineness"):
        params["fineness"] = int(raw.get("fineness", str(1 << 14)))
    if want("n"):
        params["n"] = int(raw.get("n", str(1 << 12)))
    if want("y"):
        params["y"] = float(Fraction(raw.get("y", "1")))
    if want("dt"):
        params["dt"] = float(Fraction(raw.get("dt", "1")))
    if want("draws"):
        params["draws"] = int(raw.get("draws", "100000"))
    if want("level"):
        params["level"] = float(Fraction(raw.get("level", "1")))
    if want("offset"):
        params["offset"] = float(Fraction(raw.get("offset", "1/2")))
    if want("eps"):
        params["eps"] = float(Fraction(raw.get("eps", "1/20")))
    if want("t"):
        params["t"] = float(Fraction(raw.get("t", "2")))
    if want("t_ratio"):
        params["t_ratio"] = float(Fraction(raw.get("t_ratio", "1")))
    if want("scales") and "scales" in raw:
        params["scales"] = _parse_float_list(raw["scales"])
    elif want("scales"):
        params["scales"] = [2.0 ** -j for j in range(7, 15)]
    if want("paths"):
        params["paths"] = int(raw.get("paths", "100"))
    if want("scenery_draws"):
        params["scenery_draws"] = int(raw.get("scenery_draws", "64"))
    for key in raw:
        if key not in _SCHEMA[sub]["params"]:
            raise ValueError(f"params.{key}: unknown key for {sub}")
    return params


def _rows_from_estimates(kind, n_list, estimates):
    return [
        {"name": kind, "n": n, "value": e.value, "std_error": e.std_error}
        for n, e in zip(n_list, estimates)
    ]


def run(config):
    """Execute a validated config; returns (exit_code, rows, report)."""
    stream = derive_stream(config.seed, 0)
    rows = []
    report = {"subcommand": config.subcommand, "seed": config.seed,
              "derived": config.derived, "tests": [], "fits": {}, "values": {}}
    sub = config.subcommand
    p = config.params

    if sub == "analyze-law":
        report["values"] = dict(config.derived)
        rows.append({"name": "sigma2", "n": 0, "value": config.derived["sigma2"],
                     "std_error": 0.0})
        rows.append({"name": "d", "n": 0, "value": config.derived["d"],
                     "std_error": 0.0})
        rows.append({"name": "d0", "n": 0, "value": config.derived["d0"],
                     "std_error": 0.0})

    elif sub == "oracle":
        from .exact_oracle import exact_counting_moment, exact_joint_return

        times = p.get("times", [2])
        res = exact_joint_return(config.step, config.scenery, times, rational=True)
        rows.append({"name": "exact_joint_return", "n": times[-1],
                     "value": res.value, "std_error": 0.0})
        moment = exact_counting_moment(config.step, config.scenery, p["n_max"], 1)
        rows.append({"name": "exact_counting_moment_k1", "n": p["n_max"],
                     "value": moment, "std_error": 0.0})
        report["values"]["path_count"] = res.path_count

    elif sub == "return-curve":
        k = p.get("k", 1)
        if config.allow_inadmissible:
            bad = [n for n in p["n_list"] if n % config.scenery.d0]
            vals = []
            for n in bad:
                est = harness.estimate_from_values(
                    harness._return_values_k1(config.step, config.scenery, n,
                                              config.replicas, stream),
                    config.seed,
                )
                assert est.value == 0.0, "inadmissible time with nonzero estimate"
                vals.append((n, est))
            rows.extend(_rows_from_estimates("return_prob_inadmissible",
                                             [n for n, _ in vals],
                                             [e for _, e in vals]))
        else:
            ests, fit = harness.estimate_return_curve(
                config.step, config.scenery, p["n_list"], k=k,
                T_ratios=p.get("t_ratios"), walk_replicas=config.replicas,
                stream=stream, scenery_draws=p.get("scenery_draws", 64),
            )
            rows.extend(_rows_from_estimates("return_prob", p["n_list"], ests))
            report["fits"]["return_curve"] = _fit_dict(fit)

    elif sub == "counting-moments":
        curve = harness.counting_moment_curve(
            config.step, config.scenery, p.get("k", 1), p["n_list"],
            config.replicas, stream,
        )
        rows.extend(_rows_from_estimates(f"zero_count_moment_k{p.get('k', 1)}",
                                         p["n_list"], curve.estimates))
        report["fits"]["counting_moments"] = _fit_dict(curve.fit)
        report["values"]["amplitude"] = curve.amplitude
        report["values"]["amplitude_se"] = curve.amplitude_se

    elif sub == "gram":
        reports = harness.gram_convergence_test(
            config.step, p["n"], p["t_list"], config.replicas, p["fineness"],
            stream,
        )
        for rep in reports:
            report["tests"].append(_report_dict(rep))
            rows.append({"name": rep.name, "n": p["n"], "value": rep.value,
                         "std_error": 0.0})

    elif sub == "estimate-c":
        res = brownian.estimate_C(p["t_list"], config.replicas, p["fineness"],
                                  stream)
        rows.append({"name": "C_estimate", "n": len(p["t_list"]),
                     "value": res.estimate.value,
                     "std_error": res.estimate.std_error})
        report["values"].update(
            bound_ratio=res.bound_ratio, bound_ratio_se=res.bound_ratio_se,
            rejected=res.rejected,
        )

    elif sub == "besq-check":
        sub_stream = stream.substream(0)
        draws = brownian.besq0_step(p["y"], p["dt"], sub_stream, size=p["draws"])
        atom = float((draws == 0).mean())
        expect = brownian.besq0_extinction(p["y"], p["dt"])
        se = math.sqrt(expect * (1 - expect) / p["draws"])
        rows.append({"name": "extinction", "n": p["draws"], "value": atom,
                     "std_error": se})
        verdict = abs(atom - expect) <= 3 * se
        report["tests"].append({"name": "besq_extinction", "statistic": "abs-dev",
                                "value": abs(atom - expect), "threshold": 3 * se,
                                "verdict": bool(verdict)})

    elif sub == "ray-knight":
        from scipy import stats as sps

        m = p["fineness"]
        offset = p["offset"]
        j = int(round(offset * math.sqrt(m)))
        vals = np.empty(config.replicas)
        for i in range(config.replicas):
            prof = brownian.ray_knight_profile_fast(p["level"], m,
                                                    stream.substream(i))
            vals[i] = prof[j] if j < prof.size else 0.0
        other = brownian.besq0_step(p["level"], offset, stream.substream(1 << 32),
                                    size=config.replicas)
        stat = sps.ks_2samp(vals, other).statistic
        thr = harness.ks_threshold(config.replicas, config.replicas)
        rep = harness.TestReport.build("ray_knight_vs_besq", "KS", stat,
                                       config.replicas, config.replicas, thr)
        report["tests"].append(_report_dict(rep))
        rows.append({"name": rep.name, "n": config.replicas, "value": stat,
                     "std_error": 0.0})

    elif sub == "delta-localtime":
        vals = np.empty(config.replicas)
        for i in range(config.replicas):
            path = delta_process.sample_delta_path(p["t"], p["dt"], p["fineness"],
                                                   stream.substream(i))
            vals[i] = delta_process.mollified_values(path, p["eps"], p["t"],
                                                     [0.0])[0]
        rows.append({"name": "mollified_local_time", "n": config.replicas,
                     "value": float(vals.mean()),
                     "std_error": float(vals.std(ddof=1) / math.sqrt(len(vals)))})

    elif sub == "scaling-test":
        rep = harness.scaling_law_test(p["t"], config.replicas, stream,
                                       eps=p["eps"], fineness=p["fineness"],
                                       dt=p["dt"])
        report["tests"].append(_report_dict(rep))
        rows.append({"name": rep.name, "n": config.replicas, "value": rep.value,
                     "std_error": 0.0})

    elif sub == "correlation-ratio":
        lhs, rhs = harness.correlation_ratio(
            p["n"], p["t_ratio"], config.replicas, stream,
            step=config.step, scen=config.scenery, fineness=p["fineness"],
        )
        rows.append({"name": "lhs", "n": p["n"], "value": lhs.value,
                     "std_error": lhs.std_error})
        rows.append({"name": "rhs", "n": p["n"], "value": rhs.value,
                     "std_error": rhs.std_error})
        se = math.sqrt(lhs.std_error ** 2 + rhs.std_error ** 2)
        report["tests"].append({
            "name": "correlation_ratio_match", "statistic": "abs-dev",
            "value": abs(lhs.value - rhs.value), "threshold": 3 * se,
            "verdict": bool(abs(lhs.value - rhs.value) <= 3 * se),
        })

    elif sub == "boxcount":
        slopes = []
        for i in range(p["paths"]):
            path = delta_process.sample_delta_path(1.0, p["dt"], p["fineness"],
                                                   stream.substream(i))
            try:
                slopes.append(delta_process.zero_set_boxcount(path,
                                                              p["scales"]).slope)
            except DegenerateRatioError:
                continue
        mean = float(np.mean(slopes))
        se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes)))
        rows.append({"name": "boxcount_slope", "n": len(slopes), "value": mean,
                     "std_error": se})
        report["values"]["excluded_paths"] = p["paths"] - len(slopes)

    failed = [t for t in report["tests"] if not t["verdict"]]
    return (2 if failed else 0), rows, report


def _fit_dict(fit):
    return {"slope": fit.slope, "intercept": fit.intercept,
            "slope_ci": fit.slope_ci, "r2": fit.r2}


def _report_dict(rep):
    return {"name": rep.name, "statistic": rep.statistic, "value": rep.value,
            "n1": rep.n1, "n2": rep.n2, "threshold": rep.threshold,
            "verdict": rep.verdict}


def export_results(rows, report, out_dir):
    """Write results.csv (17 significant digits) and report.json."""
    if not rows:
        raise ValueError("no results to export")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    json_path = os.path.join(out_dir, "report.json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,n,value,std_error\n")
        for row in rows:
            fh.write(
                f"{row['name']},{row['n']},{row['value']:.17g},"
                f"{row['std_error']:.17g}\n"
            )
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [csv_path, json_path]


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rwrs",
        description="Random-walk-in-random-scenery estimation laboratory",
    )
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--replicas", type=int, default=None,
                        help="replica-count override")
    parser.add_argument("--allow-inadmissible", action="store_true",
                        help="run inadmissible times and assert exact zeros")
    args = parser.parse_args(argv)

    overrides = {"seed": args.seed, "out": args.out, "replicas": args.replicas,
                 "allow_inadmissible": args.allow_inadmissible}
    overrides = {k: v for k, v in overrides.items() if v not in (None, False)}
    config = validate_config(args.config, overrides)
    if isinstance(config, list):
        for err in config:
            print(f"config error: {err}", file=sys.stderr)
        return 1

    started = time.time()
    try:
        code, rows, report = run(config)
        outputs = export_results(rows, report, config.out_dir)
    except Exception as exc:  # runtime failure -> exit 1, message on stderr
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    write_manifest(config.snapshot(), outputs, config.seed, __version__,
                   started, os.path.join(config.out_dir, "manifest.txt"))
    for row in rows[:8]:
        print(f"{row['name']} n={row['n']}: {row['value']:.6g} "
              f"+- {row['std_error']:.3g}")
    if code == 2:
        print("one or more test reports FAILED", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
