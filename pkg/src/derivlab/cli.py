"""Command-line front end.

Every subcommand writes CSV to standard output (header first, floats with 12
significant digits) and can mirror it to ``--output``.  Exit codes: 0 success,
2 invalid input, 3 numerical failure, 4 file I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic, control, fourier, market_core, monte_carlo, pde_lattice, vol_surface
from .analytic import BsParams, OptionSpec
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
MIN_CURVE_POINTS = 200
# tolerances used by `compare`; none is looser than the cross-method acceptance bounds
COMPARE_RTOL = 1e-3
COMPARE_MC_SE = 3.0


def fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


class _Emitter:
    def __init__(self, stream):
        self.buffer = io.StringIO()
        self.stream = stream

    def rows(self, header, rows):
        w = csv.writer(self.buffer, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])

    def flush(self, output_path=None):
        text = self.buffer.getvalue()
        if output_path:
            _write_text(output_path, text)
        self.stream.write(text)


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_csv(path, header, rows):
    em = _Emitter(None)
    em.rows(header, rows)
    _write_text(path, em.buffer.getvalue())


def _finite(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite: {text!r}")
    return v


def _float_list(text):
    return [_finite(x) for x in str(text).split(",") if x.strip()]


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment, dashes and underscores in keys are equivalent."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# --------------------------------------------------------------------------
# parser


def _market(p, strike=True, sigma=True, kind=True):
    p.add_argument("--spot", type=_finite)
    if strike:
        p.add_argument("--strike", type=_finite)
    p.add_argument("--rate", type=_finite, default=0.0)
    if sigma:
        p.add_argument("--sigma", type=_finite)
    p.add_argument("--tau", type=_finite, help="time to maturity in years")
    p.add_argument("--dividend-yield", type=_finite, default=0.0)
    if kind:
        p.add_argument("--kind", choices=["call", "put"], default="call")


def _seeded(p, paths):
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int, default=paths)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="derivlab", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file merged under explicit flags")
    common.add_argument("--output", help="also write the CSV to this file")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    _market(add("price", "Black-Scholes price"))
    _market(add("greeks", "all eight Black-Scholes Greeks"))

    p = add("implied-vol", "implied volatility of a price, or of every price quote in an option chain")
    _market(p, sigma=False)
    p.add_argument("--price", type=_finite)
    p.add_argument("--input", help="option chain CSV strike,maturity,kind,quote_type,quote")

    for name, text in (("surface-fit", "fit SVI slices to an option chain"),
                       ("local-vol", "Dupire local volatility from an option chain")):
        p = add(name, text)
        p.add_argument("--input", help="option chain CSV")
        p.add_argument("--spot", type=_finite)
        p.add_argument("--rate", type=_finite, default=0.0)
        p.add_argument("--dividend-yield", type=_finite, default=0.0)
        p.add_argument("--seed", type=int)

    p = add("fourier-price", "characteristic-function pricing")
    _market(p)
    p.add_argument("--model", choices=["gbm", "heston", "merton-jd"], default="gbm")
    p.add_argument("--method", choices=["gil-pelaez", "lewis", "explicit"], default="gil-pelaez")
    p.add_argument("--payoff", choices=sorted(fourier.PAYOFFS), help="Lewis payoff (defaults to --kind)")
    p.add_argument("--contour", type=_finite, help="imaginary part of the Lewis contour")
    _heston_args(p)
    p.add_argument("--jump-intensity", type=_finite, default=0.0)
    p.add_argument("--jump-mean", type=_finite, default=0.0)
    p.add_argument("--jump-sigma", type=_finite, default=0.0)

    p = add("mc", "Monte Carlo estimate")
    _market(p)
    _heston_args(p)
    _seeded(p, 100_000)
    p.add_argument("--scheme", choices=[s.value for s in monte_carlo.Scheme], default="gbm-exact")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--product", choices=["european", "asian", "ruin"], default="european")
    p.add_argument("--lower", type=_finite, help="ruin: lower barrier a < 0")
    p.add_argument("--upper", type=_finite, help="ruin: upper barrier b > 0")
    p.add_argument("--dt", type=_finite, default=1e-3, help="ruin: time step")
    p.add_argument("--input", help="option chain CSV for the local-vol scheme")
    p.add_argument("--dump-paths", help=f"write path_id,t,value for at most {monte_carlo.PATH_DUMP_CAP} paths")

    p = add("tree", "binomial tree with early exercise")
    _market(p)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--exercise", choices=[e.value for e in pde_lattice.Exercise], default="american")
    p.add_argument("--t1", type=_finite)
    p.add_argument("--k1", type=_finite)
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--no-richardson", action="store_true")
    p.add_argument("--boundary", help="write the exercise boundary t,s_exercise to this file")

    p = add("pde", "finite-difference PDE price")
    _market(p)
    p.add_argument("--product", choices=["european", "asian"], default="european")
    p.add_argument("--n-space", type=int)
    p.add_argument("--n-time", type=int, default=400)
    p.add_argument("--theta", type=_finite, default=0.5)

    p = add("control", "optimal investment problems")
    p.add_argument("--problem", required=False,
                   choices=["merton-log", "merton-power", "merton-log-consumption", "stoch-returns", "affine-heston"])
    for flag in ("--mu", "--sigma", "--kappa", "--beta-vol", "--rho", "--y-bar", "--beta"):
        p.add_argument(flag, type=_finite)
    p.add_argument("--rate", type=_finite, default=0.0)
    p.add_argument("--gamma", type=_finite, default=1.0, help="relative (or absolute) risk aversion")
    p.add_argument("--horizon", type=_finite, default=1.0)
    p.add_argument("--t", type=_finite, default=0.0)
    p.add_argument("--wealth", type=_finite, default=1.0)
    p.add_argument("--factor", type=_finite, help="state of the second factor")
    p.add_argument("--coefficients", help="write t,a,b rows to this file")
    p.add_argument("--rows", type=int, default=101)

    p = add("discrete-market", "replication, martingale measure and arbitrage in a one-period market")
    p.add_argument("--input", help="market CSV")
    p.add_argument("--bank-return", type=_finite, help="gross return R of the bank account")
    p.add_argument("--claim", type=_float_list, help="comma-separated claim payoff per state")

    p = add("compare", "same European option by analytic, Fourier, Monte Carlo and PDE")
    _market(p)
    _seeded(p, 1_000_000)

    p = add("curve", "x,y data for plotting")
    _market(p)
    p.add_argument("--quantity", choices=["payoff", "price", "delta", "theta", "gamma-vega", "boundary", "smile"])
    p.add_argument("--x-min", type=_finite)
    p.add_argument("--x-max", type=_finite)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--svi", type=_float_list, help="smile: a,b,rho,m,xi")
    p.add_argument("--steps", type=int, default=2000, help="boundary: tree steps")
    return parser


def _heston_args(p):
    for flag in ("--kappa", "--x-bar", "--gamma", "--x0"):
        p.add_argument(flag, type=_finite)
    p.add_argument("--rho", type=_finite, default=0.0)


# --------------------------------------------------------------------------
# helpers


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValidationError("missing required parameter " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _params(args) -> BsParams:
    _need(args, "spot", "sigma", "tau")
    return BsParams(args.spot, args.rate, args.sigma, args.tau, args.dividend_yield)


def _spec(args) -> OptionSpec:
    _need(args, "strike")
    return OptionSpec(args.kind, args.strike)


def _seed(args, err):
    if args.seed is None:
        err.write("warning: no --seed given, using seed 0\n")
        return 0
    return args.seed


def _positive_int(value, name, minimum=1):
    if value is None or value < minimum:
        raise ValidationError(f"--{name} must be an integer of at least {minimum}")
    return value


# --------------------------------------------------------------------------
# commands; each returns (header, rows)


def cmd_price(args, err):
    return ["method", "price"], [("analytic", float(analytic.bs_price(_params(args), _spec(args))))]


def cmd_greeks(args, err):
    report = analytic.greeks(_params(args), _spec(args))
    return ["greek", "value"], [(k, float(v)) for k, v in report.as_dict().items()]


def cmd_implied_vol(args, err):
    if args.input:
        _need(args, "spot")
        rows = []
        for q in vol_surface.load_option_chain(args.input):
            vol = q.quote if q.quote_type == "vol" else vol_surface.implied_vol(
                q.quote, args.spot, q.strike, args.rate, q.maturity, q.kind.value, args.dividend_yield)
            rows.append((q.strike, q.maturity, q.kind.value, vol))
        return ["strike", "maturity", "kind", "implied_vol"], rows
    _need(args, "price", "spot", "strike", "tau")
    vol = vol_surface.implied_vol(args.price, args.spot, args.strike, args.rate, args.tau, args.kind,
                                  args.dividend_yield)
    return ["quantity", "value"], [("implied_vol", vol)]


def _surface(args, err):
    _need(args, "input", "spot")
    quotes = vol_surface.load_option_chain(args.input)
    return vol_surface.surface_from_quotes(quotes, args.spot, args.rate, args.dividend_yield, seed=_seed(args, err))


def cmd_surface_fit(args, err):
    surface, fits = _surface(args, err)
    for T, fit in zip(surface.maturities, fits):
        report = vol_surface.check_butterfly_arbitrage(fit.params)
        if report.ok is False:
            err.write(f"warning: SVI slice T={fmt(T)} admits butterfly arbitrage near k={fmt(report.first_violation)}\n")
    if not vol_surface.check_calendar_arbitrage(surface).ok:
        err.write("warning: fitted surface admits calendar-spread arbitrage\n")
    return ["T", "k", "omega", "a", "b", "rho", "m", "xi"], list(vol_surface.surface_rows(surface))


def cmd_local_vol(args, err):
    surface, _ = _surface(args, err)
    grid = vol_surface.dupire_local_vol(surface)
    return ["T", "K", "sigma_local"], list(grid.rows())


def _fourier_model(args):
    _need(args, "spot", "tau")
    if args.model == "gbm":
        _need(args, "sigma")
        return fourier.Gbm(args.spot, args.rate, args.sigma, args.tau)
    if args.model == "heston":
        _need(args, "kappa", "x_bar", "gamma", "x0")
        return fourier.Heston(args.spot, args.rate, args.tau, args.kappa, args.x_bar, args.gamma, args.rho, args.x0)
    _need(args, "sigma")
    return fourier.MertonJd(args.spot, args.rate, args.tau, args.sigma, args.jump_intensity, args.jump_mean,
                            args.jump_sigma)


def cmd_fourier_price(args, err):
    if args.dividend_yield:
        raise ValidationError("--dividend-yield is not supported by the Fourier models")
    model = _fourier_model(args)
    spec = _spec(args)
    if args.method == "lewis":
        payoff = args.payoff or args.kind
        return ["method", "price"], [("lewis", fourier.price_lewis(model, payoff, spec.strike, args.contour))]
    if args.method == "explicit":
        if args.model != "heston":
            raise ValidationError("--method explicit needs --model heston")
        call = fourier.heston_explicit_price(model, spec.strike)
    else:
        call, _, _ = fourier.price_call_gil_pelaez(model, spec.strike)
    price = call if spec.is_call else fourier.put_from_call(call, model, spec.strike)
    return ["method", "price"], [(args.method, price)]


def _scheme_config(args, steps):
    _need(args, "tau")
    local_vol = None
    if args.scheme == monte_carlo.Scheme.LOCAL_VOL_EULER.value:
        _need(args, "input", "spot")
        quotes = vol_surface.load_option_chain(args.input)
        surface, _ = vol_surface.surface_from_quotes(quotes, args.spot, args.rate, args.dividend_yield)
        local_vol = vol_surface.local_vol_function(surface)
    return monte_carlo.SchemeConfig(
        args.scheme, args.tau, steps, spot=args.spot if args.spot is not None else 1.0, rate=args.rate,
        dividend_yield=args.dividend_yield, sigma=args.sigma, local_vol=local_vol, kappa=args.kappa,
        x_bar=args.x_bar, gamma=args.gamma, rho=args.rho, x0=args.x0)


def cmd_mc(args, err):
    seed = _seed(args, err)
    n_paths = _positive_int(args.paths, "paths")
    if args.product == "ruin":
        _need(args, "lower", "upper")
        est = monte_carlo.gamblers_ruin(args.lower, args.upper, n_paths, args.dt, seed)
        rows = [("probability", est.probability), ("std_error", est.std_error), ("exact", est.exact),
                ("mean_exit_time", est.mean_exit_time), ("n_paths", est.n_paths), ("seed", seed)]
        return ["quantity", "value"], rows
    config = _scheme_config(args, _positive_int(args.steps, "steps"))
    if args.product == "asian":
        _need(args, "strike")
        est = monte_carlo.price_asian(config, args.strike, n_paths, seed, args.kind)
    else:
        est = monte_carlo.price_european(config, _spec(args), n_paths, seed)
    if args.dump_paths:
        batch = monte_carlo.simulate(config, min(n_paths, monte_carlo.PATH_DUMP_CAP), seed)
        write_csv(args.dump_paths, ["path_id", "t", "value"], batch.rows())
    return ["method", "price", "std_error", "n_paths", "seed"], [("mc", est.mean, est.std_error, est.n_paths, seed)]


def _tree_result(args, params, spec, steps):
    config = pde_lattice.TreeConfig(steps, params, spec, args.exercise if hasattr(args, "exercise") else "american",
                                    getattr(args, "t1", None), getattr(args, "k1", None),
                                    smoothing=not getattr(args, "no_smoothing", False),
                                    richardson=not getattr(args, "no_richardson", False))
    return pde_lattice.tree_price(config)


def cmd_tree(args, err):
    res = _tree_result(args, _params(args), _spec(args), args.steps)
    if args.boundary:
        write_csv(args.boundary, ["t", "s_exercise"], res.boundary.rows())
    return ["method", "price"], [("tree", res.price)]


def cmd_pde(args, err):
    params, spec = _params(args), _spec(args)
    if args.product == "asian":
        if not spec.is_call:
            raise ValidationError("the Asian PDE prices calls only")
        price = pde_lattice.fd_solve_asian_reduced(params, spec.strike, n_space=args.n_space or 800,
                                                   n_time=args.n_time)
    else:
        grid = pde_lattice.fd_solve_bs(params, spec, n_space=args.n_space or 400, n_time=args.n_time,
                                       theta=args.theta)
        price = grid.value_at(params.spot)
    return ["method", "price"], [("pde", price)]


def _control_solution(args):
    problem = args.problem
    if problem is None:
        raise ValidationError("missing required parameter --problem")
    if problem.startswith("merton"):
        _need(args, "mu", "sigma")
        spec = control.MertonSpec(args.mu, args.rate, args.sigma, args.gamma, args.beta, args.horizon)
        return {"merton-log": control.merton_log, "merton-power": control.merton_power,
                "merton-log-consumption": control.merton_log_consumption}[problem](spec)
    if problem == "stoch-returns":
        _need(args, "kappa", "beta_vol", "sigma", "rho")
        spec = control.StochReturnsSpec(args.kappa, args.beta_vol, args.sigma, args.rho, args.gamma, args.horizon)
        return control.stoch_returns_solution(spec)
    _need(args, "kappa", "y_bar", "beta_vol", "rho", "mu")
    spec = control.AffineHestonSpec(args.kappa, args.y_bar, args.beta_vol, args.rho, args.mu, args.gamma, args.rate,
                                    args.horizon)
    return control.affine_heston_control(spec)


def cmd_control(args, err):
    sol = _control_solution(args)
    if not 0 <= args.t < sol.horizon:
        raise ValidationError("--t must lie in [0, horizon)")
    y = args.factor
    if y is None:
        y = args.y_bar if args.problem == "affine-heston" else 0.0
    t, x = args.t, args.wealth
    rows = [("allocation", sol.allocation(t, x, y)), ("value", sol.value(t, x, y)),
            ("certainty_equivalent", sol.certainty_equivalent(t, x, y))]
    if sol.consumption is not None:
        rows.append(("consumption", sol.consumption(t, x, y)))
    if sol.blowup_time is not None:
        rows.append(("blowup_time", sol.blowup_time))
    if args.coefficients:
        write_csv(args.coefficients, ["t", "a", "b"], sol.coefficient_rows(_positive_int(args.rows, "rows", 2)))
    return ["quantity", "value"], [(k, float(v)) for k, v in rows]


def cmd_discrete_market(args, err):
    _need(args, "input", "bank_return")
    market = market_core.load_market_csv(args.input, args.bank_return)
    arb = market_core.detect_arbitrage(market)
    rows = [("arbitrage", bool(arb))]
    if arb:
        rows += [("arbitrage_bank_units", arb.bank_units)]
        rows += [(f"arbitrage_asset_units_{j}", v) for j, v in enumerate(arb.asset_units)]
        return ["quantity", "value"], rows
    emm = market_core.find_emm(market)
    rows += [("emm_unique", emm.unique)] + [(f"q_{i}", v) for i, v in enumerate(emm.q)]
    if args.claim is not None:
        rep = market_core.replicate_claim(market, args.claim)
        rows += [("bank_units", rep.bank_units)]
        rows += [(f"asset_units_{j}", v) for j, v in enumerate(rep.asset_units)]
        rows += [("initial_cost", rep.initial_cost)]
    return ["quantity", "value"], rows


def compare_rows(params: BsParams, spec: OptionSpec, n_paths: int, seed: int):
    """(method, price, std_error, agrees) for the four methods; agreement is judged against the analytic price."""
    exact = float(analytic.bs_price(params, spec))
    if params.dividend_yield:
        raise ValidationError("compare supports dividend_yield = 0 only")
    model = fourier.Gbm(params.spot, params.rate, params.sigma, params.time_to_maturity)
    call, _, _ = fourier.price_call_gil_pelaez(model, spec.strike)
    four = call if spec.is_call else fourier.put_from_call(call, model, spec.strike)
    cfg = monte_carlo.SchemeConfig("gbm-exact", params.time_to_maturity, 1, spot=params.spot, rate=params.rate,
                                   sigma=params.sigma)
    mc = monte_carlo.price_european(cfg, spec, n_paths, seed)
    pde = pde_lattice.fd_solve_bs(params, spec).value_at(params.spot)

    def close(v):
        return abs(v - exact) <= COMPARE_RTOL * abs(exact)

    return [
        ("analytic", exact, 0.0, True),
        ("fourier", four, 0.0, close(four)),
        ("mc", mc.mean, mc.std_error, abs(mc.mean - exact) <= COMPARE_MC_SE * mc.std_error),
        ("pde", pde, 0.0, close(pde)),
    ]


def cmd_compare(args, err):
    seed = _seed(args, err)
    rows = compare_rows(_params(args), _spec(args), _positive_int(args.paths, "paths"), seed)
    return ["method", "price", "std_error", "agrees"], rows


def curve_points(args):
    """(x, y) arrays for one plotted quantity."""
    q = args.quantity
    if q is None:
        raise ValidationError("missing required parameter --quantity")
    n = args.points
    if n is None or n < MIN_CURVE_POINTS:
        raise ValidationError(f"--points must be at least {MIN_CURVE_POINTS}")
    if q == "boundary":
        res = _tree_result(args, _params(args), _spec(args), max(args.steps, n))
        t, s = res.boundary.times, res.boundary.levels
        ok = ~np.isnan(s)
        if ok.sum() < MIN_CURVE_POINTS:
            raise ValidationError("the exercise boundary has fewer than 200 points; early exercise is never optimal here")
        return t[ok], s[ok]
    _need(args, "x_min", "x_max")
    if not args.x_max > args.x_min:
        raise ValidationError("--x-max must exceed --x-min")
    x = np.linspace(args.x_min, args.x_max, n)
    if q == "smile":
        _need(args, "svi", "tau")
        if len(args.svi) != 5:
            raise ValidationError("--svi needs five values a,b,rho,m,xi")
        params = vol_surface.SviParams(*args.svi)
        return x, np.sqrt(params.total_variance(x) / args.tau)
    spec = _spec(args)
    if q == "payoff":
        return x, np.maximum(x - spec.strike, 0.0) if spec.is_call else np.maximum(spec.strike - x, 0.0)
    if args.x_min <= 0:
        raise ValidationError("spot range must be positive")
    _need(args, "sigma", "tau")
    params = BsParams(x, args.rate, args.sigma, args.tau, args.dividend_yield)
    if q == "price":
        return x, np.asarray(analytic.bs_price(params, spec), dtype=float)
    g = analytic.greeks(params, spec)
    # gamma-vega: vega itself, which equals sigma * tau * S^2 * gamma
    y = {"delta": g.delta, "theta": g.theta, "gamma-vega": g.vega}[q]
    return x, np.asarray(y, dtype=float)


def cmd_curve(args, err):
    x, y = curve_points(args)
    return ["x", "y"], list(zip(x.tolist(), y.tolist()))


COMMANDS = {
    "price": cmd_price,
    "greeks": cmd_greeks,
    "implied-vol": cmd_implied_vol,
    "surface-fit": cmd_surface_fit,
    "local-vol": cmd_local_vol,
    "fourier-price": cmd_fourier_price,
    "mc": cmd_mc,
    "tree": cmd_tree,
    "pde": cmd_pde,
    "control": cmd_control,
    "discrete-market": cmd_discrete_market,
    "compare": cmd_compare,
    "curve": cmd_curve,
}


def _parse(parser, argv, err):
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known - {"config", "output"})
        if unknown:
            raise ValidationError(f"unknown key(s) in {args.config}: {', '.join(unknown)}")
        flags = {a.dest: a for a in subparser._actions}
        for key, raw in values.items():
            action = flags.get(key)
            if action is not None and action.choices is not None and raw not in action.choices:
                raise ValidationError(f"{key} in {args.config} must be one of {sorted(action.choices)}")
            if action is not None and action.nargs == 0:
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValidationError(f"{key} in {args.config} must be true or false")
                values[key] = raw.lower() in ("true", "1")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def run(argv=None, stdout=None, stderr=None) -> int:
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        real_err, sys.stderr = sys.stderr, err
        real_out, sys.stdout = sys.stdout, out
        try:
            args = _parse(parser, list(sys.argv[1:] if argv is None else argv), err)
        finally:
            sys.stderr, sys.stdout = real_err, real_out
    except SystemExit as exc:  # argparse reports usage errors (2) and --help (0) this way
        return int(exc.code or 0)
    except ValidationError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_IO
    emitter = _Emitter(out)
    try:
        header, rows = COMMANDS[args.command](args, err)
        emitter.rows(header, rows)
        emitter.flush(args.output)
    except ValidationError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalError as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        err.write(f"I/O error: {exc}\n")
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
