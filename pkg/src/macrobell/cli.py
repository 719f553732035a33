"""Batch command-line surface for all engines.

JSON in, CSV or JSON out, one artifact per invocation.  Exit code 0 on
success, 1 when the inputs are rejected, 2 when an admissible computation
detects a numeric inconsistency; in the failure cases a machine-readable
JSON error object goes to stderr.  Output files are written atomically
(temp file in the target directory, then rename), so a crashed run never
leaves a truncated artifact.

The thread cap (``--threads`` or the MACROBELL_THREADS environment
variable) is applied to the BLAS/OpenMP environment before numpy is first
imported, which is why every engine import in this module is deferred
into the command handlers.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

from .errors import MacrobellError, NumericError, ValidationError

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

#: Bloch angles (polar, azimuthal) of the named projective presets.
_POVM_PRESETS = {
    "sx": (math.pi / 2.0, 0.0),
    "sy": (math.pi / 2.0, math.pi / 2.0),
    "sz": (0.0, 0.0),
}

_PAPER_COEFFS = (2.0 / math.sqrt(10.0), 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(10.0))

_CSV_SIG_DIGITS = 18


def _fmt(x: float) -> str:
    """One float, 18 significant digits, exponent notation."""
    return f"{float(x):.{_CSV_SIG_DIGITS - 1}e}"


# --------------------------------------------------------------------------
# config plumbing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """A fully resolved invocation: command, output target, options."""

    command: str
    out: str | None
    options: dict


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through the normal error channel."""

    def error(self, message):
        raise ValidationError(message)


def _resolve_out(path: str | None) -> str | None:
    if path is None:
        return None
    resolved = os.path.abspath(path)
    parent = os.path.dirname(resolved)
    if not os.path.isdir(parent):
        raise ValidationError(f"output directory does not exist: {parent}")
    return resolved


def _resolve_input(path: str) -> str:
    resolved = os.path.abspath(path)
    if not os.path.isfile(resolved):
        raise ValidationError(f"input file does not exist: {resolved}")
    return resolved


def _is_povm_path(spec: str) -> bool:
    return spec not in _POVM_PRESETS and not spec.startswith("bloch:")


def _is_coeffs_path(spec: str) -> bool:
    return spec.startswith("@") or spec.endswith(".json")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    """Resolve every path up front, before any computation starts."""
    out = _resolve_out(getattr(args, "out", None))
    povm_spec = getattr(args, "povm", None)
    if povm_spec is not None and _is_povm_path(povm_spec):
        args.povm = _resolve_input(povm_spec)
    coeffs_spec = getattr(args, "coeffs", None)
    if coeffs_spec is not None and _is_coeffs_path(coeffs_spec):
        args.coeffs = "@" + _resolve_input(coeffs_spec.lstrip("@"))
    if args.command == "sample" and out is None:
        raise ValidationError("sample writes two artifacts; --out is required")
    return RunConfig(command=args.command, out=out, options=dict(vars(args)))


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("MACROBELL_THREADS")
        if env is None:
            return
        try:
            threads = int(env)
        except ValueError:
            raise ValidationError(f"MACROBELL_THREADS must be an integer, got {env!r}")
    if threads < 1:
        raise ValidationError("thread cap must be at least 1")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".macrobell-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _deliver(config: RunConfig, text: str, summary: dict | None = None) -> None:
    """Write the artifact; with a file target, the summary goes to stdout."""
    if config.out is None:
        sys.stdout.write(text)
    else:
        _write_atomic(config.out, text)
        if summary is not None:
            sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# input parsing
# --------------------------------------------------------------------------

def _parse_complex(token: str) -> complex:
    try:
        return complex(token.strip().replace("i", "j"))
    except ValueError:
        raise ValidationError(f"cannot parse {token!r} as a number")


def _coeffs_from_json(obj):
    """A JSON list of numbers or [re, im] pairs -> complex list."""
    values = []
    for entry in obj:
        if isinstance(entry, (int, float)):
            values.append(complex(entry))
        elif isinstance(entry, list) and len(entry) == 2:
            values.append(complex(entry[0], entry[1]))
        else:
            raise ValidationError(f"coefficient entry {entry!r} is not a number or [re, im]")
    return values


def _normalized(values, what: str):
    import numpy as np

    arr = np.asarray(values, dtype=complex)
    norm = float(np.linalg.norm(arr))
    if norm <= 0.0:
        raise ValidationError(f"{what} must not be identically zero")
    return arr / norm


def _parse_coeffs_vector(spec: str):
    """Level coefficients: preset name, @file.json, or a comma list."""
    import numpy as np

    if spec == "paper":
        return np.asarray(_PAPER_COEFFS, dtype=complex)
    if spec == "w":
        return np.asarray([0.0, 1.0], dtype=complex)
    if spec.startswith("equal:"):
        d = int(spec.split(":", 1)[1])
        if d < 1:
            raise ValidationError("equal:<d> needs d >= 1")
        return np.full(d, 1.0 / math.sqrt(d), dtype=complex)
    if spec.startswith("@"):
        with open(spec[1:], "r") as handle:
            data = json.load(handle)
        if not isinstance(data, list):
            raise ValidationError("coefficient JSON must be a flat list")
        return _normalized(_coeffs_from_json(data), "coefficients")
    return _normalized([_parse_complex(t) for t in spec.split(",")], "coefficients")


def _parse_coeffs_matrix(spec: str, seed: int, dim: int):
    """Joint coefficients c_kl: 'random', @file.json, or ';'-separated rows."""
    import numpy as np

    if spec == "random":
        if dim < 1:
            raise ValidationError("--dim must be at least 1")
        rng = np.random.default_rng(seed)
        mat = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        return _normalized(mat, "joint coefficients").reshape(dim, dim)
    if spec.startswith("@"):
        with open(spec[1:], "r") as handle:
            data = json.load(handle)
        if not isinstance(data, list) or not data or not isinstance(data[0], list):
            raise ValidationError("joint-coefficient JSON must be a nested list")
        rows = [_coeffs_from_json(row) for row in data]
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValidationError("joint-coefficient rows must have equal length")
        mat = np.asarray(rows, dtype=complex)
        return _normalized(mat, "joint coefficients").reshape(mat.shape)
    rows = [[_parse_complex(t) for t in row.split(",")] for row in spec.split(";")]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValidationError("joint-coefficient rows must have equal length")
    mat = np.asarray(rows, dtype=complex)
    return _normalized(mat, "joint coefficients").reshape(mat.shape)


def _parse_range(spec: str):
    """'start:stop:count' -> inclusive linspace."""
    import numpy as np

    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError(f"range {spec!r} must look like start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"cannot parse range {spec!r}")
    if count < 1:
        raise ValidationError("range count must be at least 1")
    return np.linspace(start, stop, count)


def _parse_int_list(spec: str):
    try:
        return [int(t) for t in spec.split(",")]
    except ValueError:
        raise ValidationError(f"cannot parse integer list {spec!r}")


def _load_povm(spec: str):
    from .povm import povm_from_json, projective_from_bloch

    if spec in _POVM_PRESETS:
        return projective_from_bloch(*_POVM_PRESETS[spec])
    if spec.startswith("bloch:"):
        angles = spec.split(":", 1)[1].split(",")
        if len(angles) != 2:
            raise ValidationError("bloch:<theta>,<phi> needs two angles")
        return projective_from_bloch(float(angles[0]), float(angles[1]))
    with open(spec, "r") as handle:
        return povm_from_json(handle.read())


def _build_state(n: int, state_spec: str | None, coeffs_spec: str | None,
                 base_level: int):
    from .finite_n import DickeSuperposition

    if coeffs_spec is not None:
        coeffs = _parse_coeffs_vector(coeffs_spec)
        return DickeSuperposition(n_particles=n, base_level=base_level, coeffs=coeffs)
    if state_spec is None:
        raise ValidationError("provide --state or --coeffs")
    if state_spec == "w":
        return DickeSuperposition.w_state(n)
    if state_spec == "paper":
        return _build_state(n, None, "paper", 0)
    if state_spec.startswith("dicke:"):
        return DickeSuperposition.dicke(n, int(state_spec.split(":", 1)[1]))
    raise ValidationError(f"unknown state {state_spec!r}; use w, paper, or dicke:<k>")


def _derived(povm, alpha: float, mu, tau):
    from .povm import derive_params

    mode = "half" if alpha == 0.5 else "one"
    return derive_params(povm, mode=mode, mu=mu, tau=tau)


def _check_alpha_flag(alpha: float) -> float:
    if alpha not in (0.5, 1.0):
        raise ValidationError("alpha must be 0.5 or 1.0")
    return float(alpha)


def _limit_level_coeffs(state):
    """Pad a finite state's coefficients down to level 0 for the limit object."""
    import numpy as np

    padded = np.zeros(state.base_level + state.coeffs.size, dtype=complex)
    padded[state.base_level:] = state.coeffs
    return padded


# --------------------------------------------------------------------------
# command handlers
# --------------------------------------------------------------------------

def _cmd_dist(config: RunConfig) -> None:
    from .finite_n import pmf_finite

    opts = config.options
    alpha = _check_alpha_flag(opts["alpha"])
    povm = _load_povm(opts["povm"])
    state = _build_state(opts["n"], opts["state"], opts["coeffs"], opts["base_level"])
    params = _derived(povm, alpha, opts["mu"], opts["tau"])
    pmf = pmf_finite(state, povm, params, alpha)
    rows = [(_fmt(x), _fmt(p)) for x, p in zip(pmf.values, pmf.probs)]
    _deliver(config, _csv_text(("x", "prob"), rows),
             summary={"points": len(rows), "total_prob": float(pmf.probs.sum())})


def _cmd_limit(config: RunConfig) -> None:
    from .limits import (LimitState, default_rotor_grid, limit_density_alpha_half,
                         limit_density_alpha_one)

    opts = config.options
    alpha = _check_alpha_flag(opts["alpha"])
    coeffs = _parse_coeffs_vector(opts["coeffs"])
    phi, width = opts["phi"], opts["width"]
    if opts["povm"] is not None:
        params = _derived(_load_povm(opts["povm"]), alpha, None, None)
        if phi is None:
            phi = params.phi
        if width is None:
            width = math.sqrt(max(params.s2, 0.0))
    if phi is None:
        # a projective x measurement: off-diagonal element is -tau at alpha=1/2
        phi = math.pi if alpha == 0.5 else 0.0
    if width is None:
        width = 0.0

    if alpha == 0.5:
        density = limit_density_alpha_half(
            LimitState(coeffs=coeffs, phi=float(phi), width=float(width)))
        header = ("x", "density")
    else:
        if width:
            raise ValidationError("width applies only to alpha = 0.5")
        grid = default_rotor_grid(opts["points"]) if opts["points"] else None
        density = limit_density_alpha_one(coeffs, float(phi), theta_grid=grid)
        header = ("theta", "density")
    rows = [(_fmt(x), _fmt(p)) for x, p in zip(density.grid, density.density)]
    _deliver(config, _csv_text(header, rows),
             summary={"points": len(rows), "integral": density.integral()})


def _cmd_chsh(config: RunConfig) -> None:
    from .bell import PAIR_NAMES, BellConfig, chsh_value, correlator, optimize_chsh

    opts = config.options
    coeffs = _parse_coeffs_vector(opts["coeffs"])
    if opts["optimize"]:
        angles = optimize_chsh(coeffs).angles
    elif opts["angles"] is not None:
        values = [float(t) for t in opts["angles"].split(",")]
        if len(values) != 4:
            raise ValidationError("--angles needs phi_a,phi_a',phi_b,phi_b'")
        angles = tuple(values)
    else:
        raise ValidationError("provide --angles or --optimize")
    bell_config = BellConfig(schmidt_coeffs=coeffs, phi_a=angles[0],
                             phi_a_prime=angles[1], phi_b=angles[2],
                             phi_b_prime=angles[3])
    payload = {
        "value": chsh_value(bell_config),
        "angles": {
            "phi_a": angles[0],
            "phi_a_prime": angles[1],
            "phi_b": angles[2],
            "phi_b_prime": angles[3],
        },
        "correlators": {pair: correlator(bell_config, pair) for pair in PAIR_NAMES},
        "optimized": bool(opts["optimize"]),
    }
    _deliver(config, _json_text(payload), summary={"value": payload["value"]})


def _cmd_local_model(config: RunConfig) -> None:
    from .bell import local_model_alpha_one

    opts = config.options
    matrix = _parse_coeffs_matrix(opts["coeffs"], opts["seed"], opts["dim"])
    grids = None
    if opts["points"]:
        import numpy as np

        axis = np.linspace(0.0, np.pi, opts["points"])
        grids = (axis, axis)
    result = local_model_alpha_one(matrix, opts["phi_a"], opts["phi_b"],
                                   theta_grids=grids)
    quantum, lhv = result.quantum_joint, result.lhv_joint
    rows = []
    for i, ta in enumerate(quantum.x_grid):
        for j, tb in enumerate(quantum.y_grid):
            q = quantum.density[i, j]
            c = lhv.density[i, j]
            rows.append((_fmt(ta), _fmt(tb), _fmt(q), _fmt(c), _fmt(abs(q - c))))
    _deliver(config,
             _csv_text(("theta_a", "theta_b", "quantum", "lhv", "abs_diff"), rows),
             summary={"max_discrepancy": result.max_discrepancy})


def _cmd_noise_sweep(config: RunConfig) -> None:
    from .noise import noisy_chsh_sweep

    opts = config.options
    coeffs = _parse_coeffs_vector(opts["coeffs"])
    s_grid = _parse_range(opts["s_grid"])
    eps_grid = _parse_range(opts["eps_grid"])
    result = noisy_chsh_sweep(coeffs, s_grid, eps_grid, shape=opts["shape"])
    rows = []
    for i, eps in enumerate(result.eps_grid):
        for j, s in enumerate(result.s_grid):
            rows.append((_fmt(s), _fmt(eps), _fmt(result.chsh[i, j])))
    thresholds = {
        _fmt(eps): (None if math.isnan(t) else t)
        for eps, t in zip(result.eps_grid, result.threshold_s)
    }
    _deliver(config, _csv_text(("s", "eps", "chsh"), rows),
             summary={"clean_value": result.clean_value,
                      "angles": list(result.angles),
                      "threshold_s": thresholds})


def _cmd_channel(config: RunConfig) -> None:
    from .noise import NoiseSpec, noisy_limit_params

    opts = config.options
    povm = _load_povm(opts["povm"])
    noise = NoiseSpec(loss_p=opts["loss"], depol_lambda=opts["depol"],
                      dephase_lambda=opts["dephase"])
    result = noisy_limit_params(povm, noise, mode=opts["mode"])
    payload = {
        "s_squared": result.s_squared,
        "s": math.sqrt(result.s_squared) if result.s_squared >= 0.0 else None,
        "phi": result.phi,
        "mode": opts["mode"],
        "noise": {"loss_p": noise.loss_p, "depol_lambda": noise.depol_lambda,
                  "dephase_lambda": noise.dephase_lambda},
    }
    _deliver(config, _json_text(payload), summary={"s_squared": result.s_squared})


def _cmd_sample(config: RunConfig) -> None:
    from .sampling import sample_outcomes

    opts = config.options
    alpha = _check_alpha_flag(opts["alpha"])
    povm = _load_povm(opts["povm"])
    state = _build_state(opts["n"], opts["state"], opts["coeffs"], opts["base_level"])
    params = _derived(povm, alpha, opts["mu"], opts["tau"])
    batch = sample_outcomes(state, povm, params, alpha, opts["n_samples"],
                            opts["seed"])
    rows = [(_fmt(x),) for x in batch.values]
    sidecar = {
        "seed": batch.seed,
        "N": batch.n_particles,
        "n_samples": batch.n_samples,
        "alpha": alpha,
        "mu": params.mu,
        "tau": params.tau,
    }
    _write_atomic(config.out + ".meta.json", _json_text(sidecar))
    _deliver(config, _csv_text(("x",), rows), summary=sidecar)


def _cmd_converge(config: RunConfig) -> None:
    from .limits import (LimitState, limit_density_alpha_half,
                         limit_density_alpha_one, rotor_pushforward)
    from .sampling import ks_distance, sample_outcomes

    opts = config.options
    alpha = _check_alpha_flag(opts["alpha"])
    povm = _load_povm(opts["povm"])
    n_values = _parse_int_list(opts["n_list"])
    params = _derived(povm, alpha, opts["mu"], opts["tau"])
    reference_state = _build_state(max(n_values), opts["state"], opts["coeffs"],
                                   opts["base_level"])
    level_coeffs = _limit_level_coeffs(reference_state)
    if alpha == 0.5:
        limit = limit_density_alpha_half(
            LimitState(coeffs=level_coeffs, phi=params.phi,
                       width=math.sqrt(max(params.s2, 0.0))))
    else:
        rotor = limit_density_alpha_one(level_coeffs, params.phi)
        limit = rotor_pushforward(rotor)
    rows = []
    for n in n_values:
        state = _build_state(n, opts["state"], opts["coeffs"], opts["base_level"])
        batch = sample_outcomes(state, povm, params, alpha, opts["n_samples"],
                                opts["seed"])
        rows.append((str(n), _fmt(ks_distance(batch, limit.cdf))))
    _deliver(config, _csv_text(("N", "ks"), rows),
             summary={"n_values": n_values, "n_samples": opts["n_samples"]})


# --------------------------------------------------------------------------
# selftest
# --------------------------------------------------------------------------

def _selftest_checks():
    """Yield (name, callable) pairs; each callable returns a residual."""
    import numpy as np

    from .bell import (BellConfig, chsh_value, local_model_alpha_one,
                       sign_overlap_table)
    from .finite_n import (DickeSuperposition, brute_force_char_fn,
                           brute_force_pmf, char_fn_finite, pmf_finite,
                           total_variation)
    from .limits import (LimitState, limit_density_alpha_half,
                         limit_density_alpha_one, verify_hermite_lemma)
    from .noise import loss_width
    from .povm import derive_params, projective_from_bloch
    from .sampling import sample_outcomes

    sx = projective_from_bloch(math.pi / 2.0, 0.0)
    params = derive_params(sx)
    paper = np.asarray(_PAPER_COEFFS, dtype=complex)
    state8 = DickeSuperposition(n_particles=8, base_level=0, coeffs=paper)

    def sign_overlaps():
        table = sign_overlap_table(3).values
        residual = max(abs(table[0, 1] - math.sqrt(2.0 / math.pi)),
                       abs(table[1, 2] - 1.0 / math.sqrt(math.pi)))
        parity = max(abs(table[0, 0]), abs(table[0, 2]), abs(table[1, 1]))
        return max(residual, 0.0 if parity == 0.0 else 1.0)

    def oracle_pmf():
        exact = pmf_finite(state8, sx, params, 0.5)
        brute = brute_force_pmf(state8, sx, params, 0.5)
        return total_variation(exact, brute)

    def oracle_charfn():
        t = np.linspace(-4.0, 4.0, 9)
        fast = char_fn_finite(state8, sx, params, 0.5, t)
        slow = brute_force_char_fn(state8, sx, params, 0.5, t)
        return float(np.max(np.abs(fast - slow)))

    def hermite_lemma():
        worst = 0.0
        for m, n in ((0, 0), (1, 2), (3, 3)):
            for beta, gamma in ((0.5, 2.0), (1.0, 1.0)):
                worst = max(worst, verify_hermite_lemma(m, n, beta, gamma))
        return worst

    def pmf_normalization():
        return abs(float(pmf_finite(state8, sx, params, 0.5).probs.sum()) - 1.0)

    def limit_normalization():
        line = limit_density_alpha_half(LimitState(coeffs=paper, phi=math.pi))
        rotor = limit_density_alpha_one(paper, 0.0)
        return max(abs(line.integral() - 1.0), abs(rotor.integral() - 1.0))

    def chsh_paper():
        bc = BellConfig(schmidt_coeffs=paper, phi_a=0.0, phi_a_prime=math.pi / 2.0,
                        phi_b=-math.pi / 4.0, phi_b_prime=math.pi / 4.0)
        return abs(chsh_value(bc) - 2.0 * math.sqrt(10.0) / math.pi)

    def lhv_match():
        rng = np.random.default_rng(7)
        mat = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        mat /= np.linalg.norm(mat)
        grid = np.linspace(0.0, np.pi, 41)
        return local_model_alpha_one(mat, 0.3, -0.2,
                                     theta_grids=(grid, grid)).max_discrepancy

    def sampler_reproducible():
        a = sample_outcomes(state8, sx, params, 0.5, 300, seed=5)
        b = sample_outcomes(state8, sx, params, 0.5, 300, seed=5, chunk_elements=1)
        return 0.0 if np.array_equal(a.values, b.values) else 1.0

    def loss_width_unit():
        return abs(loss_width(params, 1.0) - params.s2)

    return [
        ("sign-overlaps", sign_overlaps, 1e-9),
        ("oracle-pmf", oracle_pmf, 1e-10),
        ("oracle-charfn", oracle_charfn, 1e-10),
        ("hermite-lemma", hermite_lemma, 1e-8),
        ("pmf-normalization", pmf_normalization, 1e-9),
        ("limit-normalization", limit_normalization, 1e-9),
        ("chsh-paper-value", chsh_paper, 1e-9),
        ("lhv-two-routes", lhv_match, 1e-8),
        ("sampler-reproducible", sampler_reproducible, 0.5),
        ("loss-width-at-unit-transmission", loss_width_unit, 0.0),
    ]


def _cmd_selftest(config: RunConfig) -> None:
    failures = 0
    for name, check, budget in _selftest_checks():
        residual = float(check())
        if residual <= budget:
            sys.stdout.write(f"ok   {name} (residual {residual:.3e})\n")
        else:
            failures += 1
            sys.stdout.write(
                f"FAIL {name} (residual {residual:.3e} > {budget:.0e})\n")
    sys.stdout.write(f"{'all checks passed' if not failures else f'{failures} check(s) failed'}\n")
    if failures:
        raise NumericError(f"selftest: {failures} check(s) failed")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="macrobell",
                     description="Coarse-grained collective-measurement toolkit")
    common = _Parser(add_help=False)
    common.add_argument("--out", default=None,
                        help="output artifact path (default: stdout)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap internal BLAS/OpenMP parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, **kwargs):
        return sub.add_parser(name, parents=[common], help=help_text, **kwargs)

    p = add("dist", "exact finite-N PMF of the rescaled intensity -> CSV x,prob")
    p.add_argument("--N", dest="n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--povm", required=True,
                   help="sx|sy|sz, bloch:<theta>,<phi>, or a JSON file")
    p.add_argument("--state", default=None, help="w, paper, or dicke:<k>")
    p.add_argument("--coeffs", default=None,
                   help="level coefficients: paper|w|equal:<d>, @file.json, or a comma list")
    p.add_argument("--base-level", dest="base_level", type=int, default=0)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)

    p = add("limit", "limit density -> CSV x,density (alpha=0.5) or theta,density (alpha=1)")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--coeffs", required=True)
    p.add_argument("--phi", type=float, default=None,
                   help="measurement phase (default: projective x measurement)")
    p.add_argument("--width", type=float, default=None,
                   help="smearing width s (alpha=0.5 only)")
    p.add_argument("--povm", default=None,
                   help="derive phi/width from this POVM instead")
    p.add_argument("--points", type=int, default=None)

    p = add("chsh", "CHSH value and correlators -> JSON")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--angles", default=None, help="phi_a,phi_a',phi_b,phi_b' in radians")
    p.add_argument("--optimize", action="store_true")

    p = add("local-model", "quantum vs hidden-variable joint at alpha=1 -> CSV")
    p.add_argument("--coeffs", required=True,
                   help="'random', @file.json, or ';'-separated comma rows")
    p.add_argument("--dim", type=int, default=3, help="size used with 'random'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phi-a", dest="phi_a", type=float, default=0.0)
    p.add_argument("--phi-b", dest="phi_b", type=float, default=0.0)
    p.add_argument("--points", type=int, default=None)

    p = add("noise-sweep", "CHSH over smearing x classical-noise grid -> CSV s,eps,chsh")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--s-grid", dest="s_grid", default="0:0.5:11",
                   help="start:stop:count")
    p.add_argument("--eps-grid", dest="eps_grid", default="0:0.5:6",
                   help="start:stop:count")
    p.add_argument("--shape", choices=("uniform", "truncated_gaussian"),
                   default="uniform")

    p = add("channel", "limit parameters after channel noise -> JSON")
    p.add_argument("--povm", required=True)
    p.add_argument("--depol", type=float, default=0.0)
    p.add_argument("--dephase", type=float, default=0.0)
    p.add_argument("--loss", type=float, default=1.0)
    p.add_argument("--mode", choices=("half", "one"), default="half")

    p = add("sample", "sequential sampler -> CSV x plus JSON sidecar")
    p.add_argument("--N", dest="n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--povm", required=True)
    p.add_argument("--state", default=None)
    p.add_argument("--coeffs", default=None)
    p.add_argument("--base-level", dest="base_level", type=int, default=0)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("converge", "KS distance to the limit law per N -> CSV N,ks")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--povm", required=True)
    p.add_argument("--state", default=None)
    p.add_argument("--coeffs", default=None)
    p.add_argument("--base-level", dest="base_level", type=int, default=0)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--n-list", dest="n_list", required=True,
                   help="comma list of particle counts")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)

    add("selftest", "run the embedded invariant suite")
    return parser


_HANDLERS = {
    "dist": _cmd_dist,
    "limit": _cmd_limit,
    "chsh": _cmd_chsh,
    "local-model": _cmd_local_model,
    "noise-sweep": _cmd_noise_sweep,
    "channel": _cmd_channel,
    "sample": _cmd_sample,
    "converge": _cmd_converge,
    "selftest": _cmd_selftest,
}


def _emit_error(exc: MacrobellError) -> None:
    payload = {"error": getattr(exc, "code", "error"), "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def run(argv=None) -> int:
    """Parse argv, execute one command, and return the exit code."""
    try:
        args = _build_parser().parse_args(argv)
        _apply_thread_cap(args.threads)
        config = _config_from_args(args)
        _HANDLERS[config.command](config)
    except ValidationError as exc:
        _emit_error(exc)
        return 1
    except NumericError as exc:
        _emit_error(exc)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
