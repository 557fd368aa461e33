"""
Command-line experiment runner.

Every command reads a flat ``key = value`` config (``#`` starts a comment),
applies command-line overrides, writes long-format CSV tables (17
significant digits) and exactly one JSON manifest into the output directory.

Exit codes: 0 success, 1 some optimiser did not converge (results are still
written), 2 configuration error.
"""

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .hamiltonian_rg import (ConvergenceWarning, OptimizerOptions, hamiltonian_dispersion,
                             run_flow)
from .lattice import LatticeSpec, ModelParams, build_hamiltonian, ground_state, regroup
from .momentum import bare_symbol, bz_grid, fold, iterate_symbol, mean_energy, sample_symbol
from .state_rg import (StateOptions, correlator_error, product_state, reconstruct,
                       run_state_flow, save_record)

log = logging.getLogger(__name__)

COMMANDS = ("dispersion", "entropy-flow", "error-sweep", "mera", "ham-flow")


class ConfigError(ValueError):
    pass


def _int_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return out


def _float_list(text):
    if text.strip().lower() in ("", "none"):
        return []
    return [float(x) for x in text.split(",")]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _auto_int(text):
    return "auto" if text.strip() == "auto" else int(text)


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


@dataclass(frozen=True)
class Key:
    parse: object
    default: str
    help: str


# every default is a string so the effective config can be echoed verbatim
KEYS = {
    "dimension": Key(_choice("1", "2"), "1", "lattice dimension"),
    "coupling": Key(float, "1.0", "nearest-neighbour coupling K"),
    "mass": Key(float, "0.0", "mass m"),
    "alpha": Key(float, "0.0", "irrelevant perturbation strength"),
    "modes_per_site": Key(_auto_int, "auto", "M (auto: 4 in 1D, 9 in 2D)"),
    "extent": Key(_auto_int, "auto", "modes per axis for covariance work (auto: 2048 / 24)"),
    "regulator_mass": Key(float, "1e-6", "mass used when the model is massless"),
    "extrapolate_regulators": Key(_float_list, "1e-4,1e-5",
                                  "extra regulators for entropy differences (none to skip)"),
    "scheme": Key(_choice("LP", "ER", "both"), "both", "coarse-graining scheme"),
    "iterations": Key(_auto_int, "auto", "RG iterations T (auto: 6 in 1D, 3 in 2D)"),
    "m_values": Key(_int_list, "auto", "M range for error-sweep, e.g. 2,4 or 2-4"),
    "tol": Key(float, "auto", "optimiser tolerance (auto: library default per path)"),
    "max_sweeps": Key(_auto_int, "auto", "optimiser iteration cap (auto: library default)"),
    "restarts": Key(_auto_int, "auto", "random restarts (auto: library default)"),
    "gate_family": Key(_choice("general", "orthogonal"), "general", "state-RG gate family"),
    "seed": Key(int, "0", "seed for random restarts"),
    "grid": Key(_auto_int, "auto", "Brillouin-zone points per axis (auto: 1025 / 65)"),
    "units": Key(_choice("rescaled", "raw"), "rescaled", "energy units of dispersion output"),
    "state": Key(_choice("ground", "product"), "ground",
                 "mera input: model ground state or a seeded lossless product state"),
    "covariance_2d": Key(_bool, "false", "allow covariance work in 2D"),
    "max_modes": Key(int, "4096", "memory budget: largest mode count for covariance work"),
    "out": Key(str, "rg-out", "output directory"),
}

FLAG_KEYS = {
    "scheme": "scheme", "dim": "dimension", "modes_per_site": "modes_per_site",
    "iterations": "iterations", "mass": "mass", "alpha": "alpha", "seed": "seed",
    "grid": "grid", "out": "out", "units": "units",
}


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; returns raw strings keyed by name."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        raw[key] = (value, f"{source}:{lineno}")
    return raw


def resolve(raw):
    """Validate raw strings and fill defaults; ``auto`` values are made explicit."""
    cfg = {}
    for key, spec in KEYS.items():
        value, where = raw.get(key, (spec.default, "default"))
        if value == "auto" and spec.default == "auto":
            cfg[key] = "auto"
            continue
        try:
            cfg[key] = spec.parse(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {value!r} ({exc})") from None
    cfg["dimension"] = int(cfg["dimension"])
    dim = cfg["dimension"]
    auto = {
        "modes_per_site": 4 if dim == 1 else 9,
        "extent": 2048 if dim == 1 else 24,
        "iterations": 6 if dim == 1 else 3,
        "grid": 1025 if dim == 1 else 65,
    }
    for key, value in auto.items():
        if cfg[key] == "auto":
            cfg[key] = value
    if cfg["m_values"] == "auto":
        cfg["m_values"] = [cfg["modes_per_site"]]
    for key in ("coupling", "mass", "alpha", "regulator_mass"):
        if cfg[key] < 0 or not math.isfinite(cfg[key]):
            raise ConfigError(f"{raw.get(key, ('', 'default'))[1]}: {key} must be finite and >= 0")
    if cfg["iterations"] < 0:
        raise ConfigError("iterations must be >= 0")
    if cfg["grid"] < 2:
        raise ConfigError("grid needs at least two points per axis")
    return cfg


def effective_text(cfg):
    lines = []
    for key in KEYS:
        v = cfg[key]
        if isinstance(v, list):
            v = ",".join(str(x) for x in v) if v else "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


# -- output helpers ---------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path.name


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    return x


# -- model plumbing -----------------------------------------------------------------


def _params(cfg):
    return ModelParams(cfg["coupling"], cfg["mass"], cfg["alpha"])


def _schemes(cfg):
    return ["ER", "LP"] if cfg["scheme"] == "both" else [cfg["scheme"]]


def _ham_opts(cfg):
    kw = {"seed": cfg["seed"]}
    for key, name in (("tol", "tol"), ("max_sweeps", "max_sweeps"), ("restarts", "restarts")):
        if cfg[key] != "auto":
            kw[name] = cfg[key]
    return OptimizerOptions(**kw)


def _state_opts(cfg):
    kw = {"seed": cfg["seed"], "family": cfg["gate_family"]}
    for key in ("tol", "max_sweeps", "restarts"):
        if cfg[key] != "auto":
            kw[key] = cfg[key]
    if cfg["gate_family"] == "orthogonal":
        kw["protect_zero_mode"] = False
    return StateOptions(**kw)


def _block_hamiltonian(cfg, m):
    dim = cfg["dimension"]
    side = m if dim == 1 else math.isqrt(m)
    if dim == 2 and side * side != m:
        raise ConfigError(f"2D needs a square modes_per_site, got {m}")
    return build_hamiltonian(LatticeSpec(dim, 2 * side, m), _params(cfg))


def _oracle_symbol(cfg, tau):
    return iterate_symbol(bare_symbol(_params(cfg), cfg["dimension"]), tau)


def _oracle_mean(cfg):
    dim = cfg["dimension"]
    pts = 4 * (cfg["grid"] - 1) + 1 if dim == 1 else 2 * (cfg["grid"] - 1) + 1
    return lambda tau: mean_energy(sample_symbol(_oracle_symbol(cfg, tau), pts))


def _ham_flow(cfg, scheme, m, iterations):
    h0 = _block_hamiltonian(cfg, m)
    if iterations == 0:
        return None, h0
    flow = run_flow(h0, scheme, iterations, _ham_opts(cfg), oracle=_oracle_mean(cfg),
                    grid=cfg["grid"])
    return flow, h0


def _covariance_state(cfg, mass_override=None):
    dim, m, n = cfg["dimension"], cfg["modes_per_site"], cfg["extent"]
    if dim == 2 and not cfg["covariance_2d"]:
        raise ConfigError("covariance work in 2D is opt-in: set covariance_2d = true")
    modes = n ** dim
    if modes > cfg["max_modes"]:
        raise ConfigError(
            f"{modes} modes exceed the covariance budget max_modes = {cfg['max_modes']}; "
            f"dense covariances need about {16 * modes * modes / 2 ** 30:.1f} GiB each pair. "
            "Lower extent (N * M per axis) or raise max_modes")
    params = _params(cfg)
    if mass_override is not None:
        params = ModelParams(params.coupling, mass_override, params.alpha)
    spec = LatticeSpec(dim, n, m, regulator_mass=cfg["regulator_mass"])
    h = build_hamiltonian(spec, params, form="dense", regulate=True)
    return ground_state(regroup(h, m))


def _check_depth(cfg):
    dim, m, n, t = cfg["dimension"], cfg["modes_per_site"], cfg["extent"], cfg["iterations"]
    side = m if dim == 1 else math.isqrt(m)
    if n % side or (n // side) % 2 ** t or (n // side) // 2 ** t < 4:
        raise ConfigError(f"extent {n} with M = {m} leaves fewer than four sites after "
                          f"{t} iterations; need extent >= {4 * side * 2 ** t}")


# -- commands ------------------------------------------------------------------------


def cmd_dispersion(cfg, out):
    """Real-space vs exact dispersion branches per generation."""
    dim, m, t_max, units = cfg["dimension"], cfg["modes_per_site"], cfg["iterations"], cfg["units"]
    schemes = _schemes(cfg)
    flows = {}
    h0 = None
    for sc in schemes:
        flows[sc], h0 = _ham_flow(cfg, sc, m, t_max)
    site_shape = h0.site_shape
    kappa, _ = bz_grid(cfg["grid"], dim)
    cols = {"ER": "E_er", "LP": "E_lp"}
    diags = {sc: (f.diagnostics if f else []) for sc, f in flows.items()}
    converged = all(d.get("converged", True) for ds in diags.values() for d in ds)
    rows = []
    for tau in range(t_max + 1):
        sym = _oracle_symbol(cfg, tau)
        exact = fold(lambda k: np.sqrt(np.clip(sym(k), 0, None)), site_shape, cfg["grid"])
        curves = {}
        for sc in schemes:
            h = h0 if flows[sc] is None else flows[sc].hamiltonians[tau]
            curves[sc] = hamiltonian_dispersion(h, cfg["grid"]).energy
        scale = 2.0 ** -tau if units == "raw" else 1.0
        if dim == 1:
            for i, k in enumerate(kappa):
                for b in range(exact.branches):
                    rows.append([tau, k, b, scale * exact.energy[i, b]]
                                + [scale * curves[sc][i, b] for sc in schemes])
        else:
            # ordered spectrum: all (point, branch) values sorted ascending
            ex = np.sort(exact.energy.ravel())
            rs = {sc: np.sort(curves[sc].ravel()) for sc in schemes}
            for r in range(ex.size):
                rows.append([tau, r, (r + 0.5) / ex.size, scale * ex[r]]
                            + [scale * rs[sc][r] for sc in schemes])
    if dim == 1:
        header = ["tau", "kappa", "branch", "E_exact"] + [cols[sc] for sc in schemes]
    else:
        header = ["tau", "rank", "fraction", "E_exact"] + [cols[sc] for sc in schemes]
    files = [write_csv(out / "dispersion.csv", header, rows)]
    return files, {"flows": diags}, converged


def cmd_ham_flow(cfg, out):
    """Hamiltonian flow diagnostics and block matrices per generation."""
    m, t_max = cfg["modes_per_site"], cfg["iterations"]
    if t_max < 1:
        raise ConfigError("ham-flow needs iterations >= 1")
    keys = ["cost", "rel_change", "block_change", "gate_change", "fixed_point",
            "E_bar_rs", "E_bar_ms", "delta_E", "sweeps", "converged"]
    rows, block_rows, diags = [], [], {}
    converged = True
    for sc in _schemes(cfg):
        flow, _ = _ham_flow(cfg, sc, m, t_max)
        diags[sc] = flow.diagnostics
        diags[sc + "_fixed_point_generation"] = flow.fixed_point_generation
        for d in flow.diagnostics:
            rows.append([d["tau"], sc] + [d.get(k) for k in keys])
            converged &= bool(d.get("converged", True))
        for h in flow.hamiltonians:
            for off in sorted(h.blocks):
                if h.range < max(abs(x) for x in off):
                    continue
                b = h.blocks[off]
                for i in range(m):
                    for j in range(m):
                        block_rows.append([h.generation, sc, ";".join(map(str, off)), i, j, b[i, j]])
    files = [write_csv(out / "ham_flow.csv", ["tau", "scheme"] + keys, rows),
             write_csv(out / "hamiltonian_blocks.csv",
                       ["tau", "scheme", "offset", "row", "col", "value"], block_rows)]
    return files, {"flows": diags}, converged


def cmd_error_sweep(cfg, out):
    """Mean-energy error of real-space flows over a range of M and tau."""
    t_max = cfg["iterations"]
    if t_max < 1:
        raise ConfigError("error-sweep needs iterations >= 1")
    rows, diags, converged = [], {}, True
    for m in cfg["m_values"]:
        for sc in _schemes(cfg):
            flow, _ = _ham_flow(cfg, sc, m, t_max)
            diags[f"{sc}_M{m}"] = flow.diagnostics
            for d in flow.diagnostics:
                rows.append([cfg["dimension"], sc, m, d["tau"], d["E_bar_rs"], d["E_bar_ms"],
                             d["delta_E"]])
                converged &= bool(d.get("converged", True))
    header = ["dimension", "scheme", "M", "tau", "E_bar_rs", "E_bar_ms", "delta_E"]
    return [write_csv(out / "error_sweep.csv", header, rows)], {"flows": diags}, converged


def _entropy_runs(cfg, sc, masses):
    out = {}
    for mreg in masses:
        c = dict(cfg, regulator_mass=mreg)
        flow = run_state_flow(_covariance_state(c), sc, cfg["iterations"], _state_opts(cfg))
        out[mreg] = flow
    return out


def cmd_entropy_flow(cfg, out):
    """Per-site entropy along state flows."""
    _check_depth(cfg)
    critical = cfg["mass"] == 0
    extra = cfg["extrapolate_regulators"] if critical else []
    masses = [cfg["regulator_mass"]] + [x for x in extra if x != cfg["regulator_mass"]]
    header = ["tau", "scheme", "S_per_site", "delta_S", "truncation_residual",
              "max_truncated_excess"]
    if len(masses) > 1:
        header += [f"delta_S_mreg_{x:g}" for x in masses] + ["delta_S_extrapolated"]
    rows, diags, converged = [], {}, True
    for sc in _schemes(cfg):
        runs = _entropy_runs(cfg, sc, masses)
        main = runs[masses[0]]
        diags[sc] = main.diagnostics
        for tau, d in enumerate(main.diagnostics):
            row = [tau, sc, d["S_per_site"], d.get("delta_S"), d.get("truncation_residual"),
                   d.get("max_truncated_excess")]
            converged &= bool(d.get("converged", True))
            if len(masses) > 1:
                ds = [runs[x].diagnostics[tau].get("delta_S") for x in masses]
                row += ds
                if tau == 0:
                    row.append(None)
                else:
                    # linear in m_reg, evaluated at zero regulator
                    fit = np.polyfit(masses, ds, 1)
                    row.append(float(fit[-1]))
            rows.append(row)
        for x in masses[1:]:
            diags[f"{sc}_mreg_{x:g}"] = runs[x].diagnostics
    extra_info = {"regulators": masses}
    return [write_csv(out / "entropy_flow.csv", header, rows)], {"flows": diags, **extra_info}, \
        converged


def cmd_mera(cfg, out):
    """State flow record, its reconstruction error and truncation certificates."""
    _check_depth(cfg)
    if cfg["state"] == "product":
        side = cfg["modes_per_site"] if cfg["dimension"] == 1 else math.isqrt(cfg["modes_per_site"])
        state = product_state(cfg["extent"] // side, cfg["modes_per_site"], cfg["dimension"],
                              rng=cfg["seed"])
    else:
        state = _covariance_state(cfg)
    cert_rows, summary_rows, diags = [], [], {}
    converged = True
    files = []
    for sc in _schemes(cfg):
        flow = run_state_flow(state, sc, cfg["iterations"], _state_opts(cfg))
        rec = reconstruct(flow)
        err_p = float(np.max(np.abs(rec.gamma_p - state.gamma_p)))
        err_q = float(np.max(np.abs(rec.gamma_q - state.gamma_q)))
        summary_rows.append([sc, cfg["iterations"], correlator_error(rec, state), err_p, err_q])
        for layer in flow.layers:
            converged &= bool(layer.converged)
            for i, lam in enumerate(layer.truncated):
                cert_rows.append([layer.generation, sc, i, lam, lam - 1.0, layer.residual_entropy])
        name = "mera" if sc == "ER" else "ttn"
        save_record(flow, out / name)
        files.append(f"{name}/record.json")
        diags[sc] = flow.diagnostics
    files.insert(0, write_csv(out / "mera_error.csv",
                              ["scheme", "iterations", "correlator_error", "error_p", "error_q"],
                              summary_rows))
    files.insert(1, write_csv(out / "truncation_certificates.csv",
                              ["tau", "scheme", "mode", "lambda", "excess", "residual_entropy"],
                              cert_rows))
    return files, {"flows": diags}, converged


HANDLERS = {
    "dispersion": cmd_dispersion,
    "entropy-flow": cmd_entropy_flow,
    "error-sweep": cmd_error_sweep,
    "mera": cmd_mera,
    "ham-flow": cmd_ham_flow,
}


def build_parser():
    p = argparse.ArgumentParser(prog="bosonrg", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--scheme", choices=("LP", "ER", "both"))
    p.add_argument("--dim", choices=("1", "2"))
    p.add_argument("--modes-per-site", dest="modes_per_site")
    p.add_argument("--iterations")
    p.add_argument("--mass")
    p.add_argument("--alpha")
    p.add_argument("--seed")
    p.add_argument("--grid")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--units", choices=("rescaled", "raw"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args):
    raw = {}
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw.update(parse_config_text(text, str(path)))
    for i, item in enumerate(args.set):
        raw.update(parse_config_text(item, f"--set[{i}]"))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            raw[key] = (str(value), f"--{flag.replace('_', '-')}")
    return resolve(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(effective_text(cfg))
        return 0
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            files, info, converged = HANDLERS[args.command](cfg, out)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    notes = sorted({str(w.message) for w in caught if issubclass(w.category, ConvergenceWarning)})
    converged = converged and not notes
    manifest = {
        "command": args.command,
        "tool": "bosonrg",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": {k: _json_safe(v) for k, v in cfg.items()},
        # library defaults behind every "auto" setting
        "hamiltonian_optimizer": _json_safe(asdict(_ham_opts(cfg))),
        "state_optimizer": _json_safe(asdict(_state_opts(cfg))),
        "outputs": files,
        "converged": converged,
        "convergence_warnings": notes,
        "wall_clock_seconds": time.perf_counter() - start,
        **_json_safe(info),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    if not converged:
        print("warning: some optimisations did not converge; see manifest.json", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
