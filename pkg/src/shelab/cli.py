"""Command-line front end: ``shelab {simulate,study,selftest,version}``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import experiments as ex
from . import selftest
from .errors import DomainError, EvaluationError, HypothesisViolation, TruncationError
from .kernels import KernelParams, green_convolve, green_eval, green_mass, green_sq_integral, image_sum, spectral_sum
from .noise import GENERATOR_ID, NoisePlan, dump_tensor, sample_increments
from .scheme import AffineDrift, InitialDatum, ModelSpec, NamedDrift, SchemeConfig, simulate_batch
from .spectral import grid, synthesize_array

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ENV = "SHELAB_OUTPUT_DIR"


def build_model(doc):
    m = doc["model"]
    if m["drift"] == "affine":
        drift = AffineDrift(m["b1"], m["c"])
    else:
        drift = NamedDrift(m["drift"], m["scale"])
    return ModelSpec(drift, m["sigma"], InitialDatum(m["u0"], m["u0_value"]), m["bc"])


def build_scheme(doc):
    s = doc["scheme"]
    return SchemeConfig(s["T"], s["N"], s["K"], s["M"], s["ref_refinement"], s["strict"])


class RunWriter:
    """Writes every artifact of one run into a fresh timestamped directory."""

    def __init__(self, doc, base=None):
        self.doc = doc
        self.hash = cfgmod.config_hash(doc)
        base = Path(base or os.environ.get(OUTPUT_ENV) or "runs")
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
        name = f"{stamp}-{self.hash[:12]}"
        path = base / name
        i = 1
        while path.exists():
            path = base / f"{name}-{i}"
            i += 1
        path.mkdir(parents=True)
        self.dir = path
        self.files = []

    @property
    def stamp(self):
        return {"config_hash": self.hash, "seed": self.doc["seed"],
                "schema_version": cfgmod.SCHEMA_VERSION, "generator": GENERATOR_ID,
                "version": __version__}

    def _comment(self):
        return "# " + " ".join(f"{k}={v}" for k, v in self.stamp.items()) + "\n"

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(self._comment())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self._write(name, buf.getvalue())

    def write_text_csv(self, name, text):
        self._write(name, self._comment() + text)

    def write_json(self, name, obj):
        obj = dict(obj)
        obj.update(self.stamp)
        self._write(name, ex.dumps_json(obj))

    def _write(self, name, text):
        (self.dir / name).write_text(text)
        self.files.append(name)

    def finish(self, extra=None):
        manifest = {"config": self.doc, "files": sorted(self.files)}
        if extra:
            manifest.update(extra)
        self.write_json("manifest.json", manifest)
        return self.dir


def _f(v):
    return repr(float(v))


# -- simulate ----------------------------------------------------------------


def cmd_simulate(doc, out_dir=None, threads=1):
    model, scheme = build_model(doc), build_scheme(doc)
    scheme.check(model)
    o = doc["output"]
    paths = np.arange(o["first_path"], o["first_path"] + o["n_paths"])
    ac, af = simulate_batch(model, scheme, doc["seed"], paths, threads=threads)
    xs = grid(scheme.M)
    w = RunWriter(doc, out_dir)
    for name, modes in (("perturbed.csv", ac), ("reference.csv", af)):
        vals = synthesize_array(model.bc, modes, scheme.M)
        rows = [(int(p), _f(x), _f(v)) for p, row in zip(paths, vals) for x, v in zip(xs, row)]
        w.write_csv(name, ["path", "x_j", "value"], rows)
    if o["noise_dump"]:
        fine = NoisePlan(scheme.delta / scheme.ratio, scheme.N * scheme.ratio, scheme.K, model.bc)
        for p in paths:
            name = f"noise_path{int(p)}.bin"
            dump_tensor(sample_increments(doc["seed"], int(p), fine), w.dir / name)
            w.files.append(name)
    return w.finish({"strict": scheme.strict, "delta": scheme.delta})


# -- study -------------------------------------------------------------------


def _ladder(doc, threads, metric):
    s = doc["study"]
    sc = doc["scheme"]
    return ex.LadderStudy(build_model(doc), T=sc["T"], x=s["x"], N0=s["N0"], n_levels=s["levels"],
                          paths=s["paths"], test_function=s["test_function"], metric=metric,
                          master_seed=doc["seed"], strict=sc["strict"], K=sc["K"], M=sc["M"],
                          ref_refinement=sc["ref_refinement"], threads=threads)


def _check_ladder_strict(study):
    for N in study.steps:
        study.config(N).check(study.model)


def kernel_checks(seed):
    """Residuals of the kernel identities on a seeded random grid."""
    rng = np.random.Generator(np.random.PCG64(seed))
    p = KernelParams(abs_tol=1e-12)
    rep = 0.0
    for bc in ("neumann", "dirichlet"):
        t = 10 ** rng.uniform(-4, math.log10(4), 100)
        x, y = rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)
        for ti, xi, yi in zip(t, x, y):
            rep = max(rep, abs(image_sum(bc, ti, xi, yi, p) - spectral_sum(bc, ti, xi, yi, p)))
    mass = max(abs(green_mass("neumann", t, x) - 1.0)
               for t in 10 ** rng.uniform(-4, 0.5, 20) for x in rng.uniform(0, 1, 5))
    semi = 0.0
    for bc in ("neumann", "dirichlet"):
        for _ in range(20):
            s_, t_ = 10 ** rng.uniform(-3, 0, 2)
            x, z = rng.uniform(0, 1, 2)
            semi = max(semi, abs(green_convolve(bc, s_, t_, x, z) - green_eval(bc, s_ + t_, x, z)))
    target = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))
    lim = max(abs(math.sqrt(1e-5) * green_sq_integral("neumann", 1e-5, 0.5) / target - 1),
              abs(math.sqrt(1e-5) * green_sq_integral("neumann", 1e-5, 0.0) / (2 * target) - 1),
              abs(math.sqrt(1e-5) * green_sq_integral("dirichlet", 1e-5, 0.5) / target - 1))
    checks = {
        "representation": {"value": rep, "tol": 1e-10},
        "neumann_mass": {"value": mass, "tol": 1e-12},
        "semigroup": {"value": semi, "tol": 1e-10},
        "small_time_limits": {"value": lim, "tol": 1e-2},
    }
    for c in checks.values():
        c["pass"] = bool(c["value"] <= c["tol"])
    return checks


def cmd_study(doc, out_dir=None, threads=1):
    s = doc["study"]
    kind = s["kind"]
    w = RunWriter(doc, out_dir)
    status = EXIT_OK
    if kind == "kernel_checks":
        checks = kernel_checks(doc["seed"])
        ok = all(c["pass"] for c in checks.values())
        w.write_json("report.json", {"study": kind, "status": "ok" if ok else "failed", "checks": checks})
        status = EXIT_OK if ok else EXIT_INVARIANT
    elif kind == "asymptotics":
        res = ex.asymptotics_study(build_model(doc), s["x"], s["z"], s["deltas"])
        w.write_json("report.json", {"study": kind, "status": "ok", **res, "rows": len(res["rows"])})
        w.write_csv("table.csv", ["delta", "z", "value", "limit"],
                    [(_f(r["delta"]), _f(r["z"]), _f(r["value"]), _f(r["limit"])) for r in res["rows"]])
    else:
        if kind == "affine":
            sc = doc["scheme"]
            est = ex.affine_density_study(build_model(doc), sc["T"], s["x"], s["steps"])
            metric = "sup_density"
        elif kind == "small_drift":
            m, sc = doc["model"], doc["scheme"]
            base = NamedDrift(m["drift"], m["scale"])
            est = ex.small_drift_study(base, s["epsilons"], sc["N"], T=sc["T"], x=s["x"], sigma=m["sigma"],
                                       u0=InitialDatum(m["u0"], m["u0_value"]), paths=s["paths"],
                                       test_function_name=s["test_function"], master_seed=doc["seed"],
                                       K=sc["K"], M=sc["M"], ref_refinement=sc["ref_refinement"],
                                       strict=sc["strict"], threads=threads, bc=m["bc"])
            metric = "weak_error"
        elif kind == "weak":
            study = _ladder(doc, threads, s["metric"] if s["metric"] in ("weak_error", "strong_l2") else "weak_error")
            _check_ladder_strict(study)
            est, metric = ex.weak_error_study(study), study.metric
        else:
            metric = s["metric"] if s["metric"] in ("sup_density", "tv") else "sup_density"
            study = _ladder(doc, threads, metric)
            _check_ladder_strict(study)
            est = ex.density_error_study(study)
        rep = ex.report_dict(kind, est, doc, doc["seed"], {"metric": metric,
                                                           "strict": doc["scheme"]["strict"]})
        w.write_json("report.json", rep)
        w.write_csv("levels.csv", ["delta", "error", "stderr"],
                    [(_f(p["h"]), _f(p["error"]), _f(p["stderr"])) for p in est.levels])
        w.write_text_csv("long.csv", ex.long_csv(kind, est, metric))
    w.finish()
    return status, w.dir


# -- entry point -------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="shelab", description="Stochastic heat equation laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "study"):
        c = sub.add_parser(name, help=f"{name} from a JSON config; extra --section.key=value override it")
        c.add_argument("config", nargs="?", help="JSON config file (defaults if omitted)")
        c.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        c.add_argument("--output-dir", default=None, help=f"base directory (default ${OUTPUT_ENV} or ./runs)")
    st = sub.add_parser("selftest", help="fast invariant suite")
    st.add_argument("--inject-fault", choices=sorted(selftest.FAULTS), default=None, help=argparse.SUPPRESS)
    sub.add_parser("version", help="print version and generator")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    known, extra = parser.parse_known_args(argv)
    try:
        if known.command == "version":
            print(f"shelab {__version__}\ngenerator {GENERATOR_ID}\nschema {cfgmod.SCHEMA_VERSION}")
            return EXIT_OK
        if known.command == "selftest":
            if extra:
                parser.error(f"unrecognized arguments: {' '.join(extra)}")
            lines, failures = selftest.run(known.inject_fault)
            print("\n".join(lines))
            print(f"{len(lines) - len(failures)}/{len(lines)} checks passed")
            if failures:
                print("failed: " + ", ".join(failures))
                return EXIT_INVARIANT
            return EXIT_OK
        bad = [a for a in extra if not a.startswith("--")]
        if bad:
            parser.error(f"unrecognized arguments: {' '.join(bad)}")
        doc = cfgmod.load(known.config, extra)
        threads = max(1, known.threads)
        if known.command == "simulate":
            out = cmd_simulate(doc, known.output_dir, threads)
            print(out)
            return EXIT_OK
        status, out = cmd_study(doc, known.output_dir, threads)
        print(out)
        return status
    except HypothesisViolation as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TruncationError, EvaluationError, FloatingPointError, OverflowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
