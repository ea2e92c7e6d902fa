"""Command-line front end.

``nnmstab <command> --config scenario.toml --out DIR`` with commands

* ``backbone``  continue the orbit family, write backbone and multiplier CSVs
* ``melnikov``  Melnikov curves (and harmonic fits) on the selected orbits
* ``classify``  stability verdicts for every Melnikov zero
* ``verify``    perturbed orbits by Newton shooting, measured vs predicted multipliers
* ``sweep``     Melnikov level sets over the family for a list of parameter values

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial results.
"""

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, csvio
from .errors import (
    ConfigError,
    ContinuationStallError,
    NnmStabError,
    NoOrbitFoundError,
    NonGenericSpectrumError,
)
from .floquet import classify_normality, decompose, min_separation, spectral_summary, tangent_basis
from .melnikov import MelnikovZero, ResonanceSpec, family_sweep, fit_harmonic, melnikov
from .orbits import (
    OrbitFamily,
    bifurcation_flags,
    continue_family,
    find_periodic_orbit,
    orbit_from_equilibrium,
    period_derivative,
)
from .stability import classify, contractions, predict_multipliers
from .verify import VerifyConfig, assign_to_subspaces, empirical_orders, find_perturbed_orbit, measured_multipliers

log = logging.getLogger("nnmstab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
TWO_PI = 2.0 * np.pi


class PartialResults(Exception):
    """Some outputs were written but the run did not complete."""


@dataclass
class RunContext:
    cfg: dict
    out: Path
    threads: int = 1
    seed_orbit: object = None
    written: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)

    @property
    def tol(self):
        return cfgmod.tolerances(self.cfg)

    @property
    def meta(self):
        return csvio.header_lines(cfgmod.config_hash(self.cfg), self.tol.as_dict())

    def write(self, name, columns, rows, extra=None):
        path = self.out / name
        meta = self.meta + [f"# {k} {v}" for k, v in (extra or {}).items()]
        csvio.write_csv(path, columns, rows, meta)
        self.written.append(name)
        return path

    def pmap(self, fn, items):
        items = list(items)
        if self.threads <= 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(fn, items))

    @property
    def system(self):
        if "system" not in self.cache:
            self.cache["system"] = cfgmod.build_system(self.cfg)
        return self.cache["system"]


# ----------------------------------------------------------------------------
# pipeline pieces
# ----------------------------------------------------------------------------


def read_seed_orbit(path, dim):
    """Seed file: one line of ``2n`` state values followed by the period."""
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            vals = [float(v) for v in line.replace(",", " ").split()]
            break
    if len(vals) != dim + 1:
        raise ConfigError(f"seed orbit file {path} must hold {dim} state values and a period, got {len(vals)} numbers")
    return np.array(vals[:dim]), vals[dim]


def _stop_predicate(cfg):
    g = lambda k: cfgmod.get(cfg, "family", k)  # noqa: E731
    h_max, w_min, w_max, wb_max = g("h_max"), g("omega_min"), g("omega_max"), g("omega_bar_max")
    fold = g("stop_at_period_fold")

    def stop(o, fam):
        if h_max is not None and o.h >= h_max:
            return True
        w = o.omega
        if w_min is not None and w <= w_min:
            return True
        if w_max is not None and w >= w_max:
            return True
        if wb_max is not None and fam.orbits[0].tau / o.tau >= wb_max:
            return True
        if fold and len(fam.orbits) > 2:
            a, b, c = (x.tau for x in fam.orbits[-3:])
            if (b - a) * (c - b) < 0:
                return True
        return False

    return stop


def build_family(ctx):
    if "family" in ctx.cache:
        return ctx.cache["family"]
    cfg, sys_ = ctx.cfg, ctx.system
    g = lambda k: cfgmod.get(cfg, "family", k)  # noqa: E731
    tol = ctx.tol.integration
    if ctx.seed_orbit is not None:
        z, tau = read_seed_orbit(ctx.seed_orbit, sys_.dim)
        seed = find_periodic_orbit(sys_, z, tau, constraint=("energy", float(sys_.hamiltonian(z))), tol=tol)
    else:
        seed = orbit_from_equilibrium(sys_, mode=g("mode"), amplitude=g("seed_amplitude"), tol=tol)
    fam = continue_family(
        sys_,
        seed,
        direction=g("direction"),
        step=g("step"),
        min_step=g("min_step"),
        max_step=g("max_step"),
        max_steps=g("max_steps"),
        stop=_stop_predicate(cfg),
        stop_on_flags=tuple(g("stop_on_flags")),
        tol=tol,
    )
    ctx.cache["family"] = fam
    return fam


def reference_period(ctx, fam):
    """``T(0)``: period of the linearized mode the family emanates from."""
    from .dynsys import linearized_frequencies

    try:
        w = linearized_frequencies(ctx.system)
        return TWO_PI / w[cfgmod.get(ctx.cfg, "family", "mode")]
    except NnmStabError:
        return fam.orbits[0].tau


def select_orbits(ctx):
    """Orbits named by ``[orbit]``: frequency crossings of the backbone or given energies."""
    if "selected" in ctx.cache:
        return ctx.cache["selected"]
    cfg, sys_ = ctx.cfg, ctx.system
    sec = cfg.get("orbit", {})
    tol = ctx.tol.integration
    if ctx.seed_orbit is not None and not sec:
        z, tau = read_seed_orbit(ctx.seed_orbit, sys_.dim)
        orbs = [find_periodic_orbit(sys_, z, tau, constraint=("period", tau), tol=tol)]
        ctx.cache["selected"] = orbs
        return orbs
    fam = build_family(ctx)
    orbs = []
    if "frequency" in sec:
        w0 = float(sec["frequency"])
        tau0 = TWO_PI / w0
        w = fam.frequencies
        for i in range(len(w) - 1):
            if (w[i] - w0) * (w[i + 1] - w0) <= 0 and w[i] != w[i + 1]:
                near = fam.orbits[i] if abs(w[i] - w0) < abs(w[i + 1] - w0) else fam.orbits[i + 1]
                orbs.append(find_periodic_orbit(sys_, near.z, tau0, constraint=("period", tau0), tol=tol))
    for h in sec.get("energies", []):
        near = fam.nearest(h)
        orbs.append(find_periodic_orbit(sys_, near.z, near.tau, constraint=("energy", float(h)), tol=tol))
    if not sec:
        orbs = list(fam.orbits)
    orbs.sort(key=lambda o: o.h)
    select = sec.get("select", "all")
    if select == "high":
        orbs = orbs[-1:]
    elif select == "low":
        orbs = orbs[:1]
    elif isinstance(select, list):
        orbs = [orbs[int(i)] for i in select]
    elif select != "all":
        raise ConfigError(f"[orbit].select must be 'all', 'high', 'low' or a list of indices, got {select!r}")
    if not orbs:
        raise ConfigError("no orbit matches [orbit]; check frequency/energies against the backbone range")
    ctx.cache["selected"] = orbs
    return orbs


def _spec(ctx, orbit):
    m = cfgmod.get(ctx.cfg, "resonance", "m")
    l = cfgmod.get(ctx.cfg, "resonance", "l")
    return ResonanceSpec(m, l, m * orbit.tau / l)


def _period_slope(ctx, orbit):
    """``T'(h)`` from the family when it brackets ``h``, else from the tangent block."""
    fam = ctx.cache.get("family")
    if fam is not None and len(fam) > 2:
        try:
            return period_derivative(fam, orbit.h), "family"
        except NnmStabError:
            pass
    B = tangent_basis(orbit.with_cycles(1)).B
    return -B[0, 1], "tangent-block"


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def _backbone_rows(ctx, fam, partial):
    n = ctx.system.n
    T0 = reference_period(ctx, fam)
    rows, mrows = [], []
    for o in fam.orbits:
        mu = np.linalg.eigvals(o.monodromy)
        mu = mu[np.lexsort((mu.imag, mu.real))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = classify_normality(o, warn=False)
        amp = o.amplitude(128)
        flags = ";".join(bifurcation_flags(o))
        rows.append(
            [o.h, o.tau, o.omega, T0 / o.tau, *amp, rep.cls, *np.ravel(np.column_stack([mu.real, mu.imag])), flags, int(partial)]
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sep = min_separation(decompose(o))
        except NnmStabError:
            sep = float("nan")
        mrows.append([o.h, o.tau, *np.ravel(np.column_stack([mu.real, mu.imag])), rep.cls, sep, flags])
    mu_cols = [c for k in range(2 * n) for c in (f"mu{k + 1}_re", f"mu{k + 1}_im")]
    cols = ["h", "tau", "omega", "omega_bar"] + [f"max_abs_q{i + 1}" for i in range(n)]
    cols += ["normality"] + mu_cols + ["flags", "partial"]
    mcols = ["h", "tau"] + mu_cols + ["normality", "min_separation", "flags"]
    return cols, rows, mcols, mrows


def cmd_backbone(ctx):
    partial = False
    try:
        fam = build_family(ctx)
    except ContinuationStallError as exc:
        fam = exc.family or OrbitFamily(ctx.system, [exc.last_orbit])
        partial = True
        log.error("%s", exc)
    cols, rows, mcols, mrows = _backbone_rows(ctx, fam, partial)
    ctx.write("backbone.csv", cols, rows, {"stop_reason": fam.stop_reason})
    ctx.write("multipliers.csv", mcols, mrows)
    if partial:
        raise PartialResults("continuation stalled; backbone.csv holds the orbits computed so far")
    return fam


def cmd_melnikov(ctx):
    orbs = select_orbits(ctx)
    build = cfgmod.perturbation_builder(ctx.cfg, ctx.system)
    pert = build()
    grid = cfgmod.get(ctx.cfg, "melnikov", "grid_size")
    nodes = cfgmod.get(ctx.cfg, "melnikov", "nodes")
    harmonic = cfgmod.get(ctx.cfg, "melnikov", "harmonic")
    rows, fits = [], []

    def one(item):
        i, o = item
        spec = _spec(ctx, o)
        return i, o, melnikov(o, pert, spec, grid_size=grid, nodes=nodes, tol=ctx.tol)

    curves = ctx.pmap(one, enumerate(orbs))
    for i, o, c in curves:
        d = c.derivative(c.s_grid) if c.derivative is not None else np.full(c.s_grid.size, np.nan)
        for s, th, v, dv in zip(c.s_grid, c.theta_grid, c.values, d):
            rows.append([i, o.h, o.omega, s, th, v, dv])
        amp, off, ph, res = fit_harmonic(c, harmonic)
        fits.append([i, o.h, o.omega, harmonic, amp, off, ph, res, c.error_estimate, len(c.zeros),
                     sum(z.kind == "simple" for z in c.zeros)])
    ctx.write("melnikov_curve.csv", ["orbit", "h", "omega", "s", "theta", "M", "dM_ds"], rows)
    ctx.write(
        "melnikov_fit.csv",
        ["orbit", "h", "omega", "harmonic", "amplitude", "offset", "phase", "fit_residual", "quad_error",
         "n_zeros", "n_simple"],
        fits,
    )
    if "sweep" in ctx.cfg:
        cmd_sweep(ctx)
    ctx.cache["curves"] = curves
    return curves


def cmd_sweep(ctx):
    sw = ctx.cfg.get("sweep")
    if sw is None:
        raise ConfigError("the sweep command needs a [sweep] table")
    fam = build_family(ctx)
    build = cfgmod.perturbation_builder(ctx.cfg, ctx.system)
    par = sw["parameter"]
    T0 = reference_period(ctx, fam)
    tables = family_sweep(
        fam,
        lambda v: build(**{par: v}),
        sw["values"],
        m=cfgmod.get(ctx.cfg, "resonance", "m"),
        l=cfgmod.get(ctx.cfg, "resonance", "l"),
        n_theta=cfgmod.get(ctx.cfg, "sweep", "n_theta"),
        nodes=cfgmod.get(ctx.cfg, "sweep", "nodes"),
        reference_period=T0,
        flag_near=cfgmod.get(ctx.cfg, "sweep", "flag_near"),
    )
    summary = []
    for tb in tables:
        rows = []
        for i in range(len(tb.omega_bar)):
            fl = ";".join(tb.flags[i])
            for j, th in enumerate(tb.theta):
                rows.append([tb.omega_bar[i], tb.energies[i], th, tb.values[i, j], tb.dtheta[i, j], fl])
        tag = f"{par}={tb.parameter:g}"
        ctx.write(f"levelset_{tag}.csv", ["omega_bar", "h", "theta", "M", "dM_dtheta", "flags"], rows)
        crow = []
        for pid, poly in enumerate(tb.contours):
            for w, th in poly:
                crow.append([pid, w, th, "simple"])
        for e in tb.events:
            crow.append([-1, e.omega_bar, e.theta, "quadratic"])
        ctx.write(f"contours_{tag}.csv", ["polyline", "omega_bar", "theta", "zero_type"], crow)
        if cfgmod.get(ctx.cfg, "sweep", "classify"):
            ctx.write(f"verdict_strips_{tag}.csv",
                      ["omega_bar", "h", "theta", "dM_dtheta", "T_prime", "verdict", "reason"],
                      _verdict_strips(ctx, fam, tb, build(**{par: tb.parameter})))
        summary.append([
            tb.parameter, tb.n_components, tb.onset, tb.termination,
            "-".join(map(str, tb.count_sequence)), "-".join(map(str, tb.resolved_sequence)),
        ])
    ctx.write(
        "sweep_summary.csv",
        [par, "components", "onset_omega_bar", "termination_omega_bar", "count_sequence", "resolved_sequence"],
        summary,
    )
    return tables


def _verdict_strips(ctx, fam, tb, pert):
    """Verdict for every zero of a level-set table.

    ``T'`` is the centred difference of the sampled family.  Contractions are
    the uniform rate when the damping is mass-proportional, otherwise they are
    computed on each orbit that carries zeros.
    """
    from .stability import uniform_contraction_check

    m = cfgmod.get(ctx.cfg, "resonance", "m")
    l = cfgmod.get(ctx.cfg, "resonance", "l")
    orbits = sorted(fam.orbits, key=lambda o: -o.tau)
    Tp = np.gradient(np.array([o.tau for o in orbits]), np.array([o.h for o in orbits]))
    alpha = uniform_contraction_check(pert, ctx.system, orbits[0])
    db = ctx.tol.sign_deadband
    rows = []
    for i, zs in enumerate(tb.zeros):
        if not zs:
            continue
        o = orbits[i]
        if tb.flags[i]:
            for th, d in zs:
                rows.append([tb.omega_bar[i], o.h, th, d, Tp[i], "inconclusive", ";".join(tb.flags[i])])
            continue
        if alpha is not None:
            C = np.full(o.system.n, alpha)
        else:
            spec = ResonanceSpec(m, l, m * o.tau / l)
            try:
                C = contractions(o.with_cycles(m), pert, spec).values
            except NnmStabError as exc:
                for th, d in zs:
                    rows.append([tb.omega_bar[i], o.h, th, d, Tp[i], "inconclusive", type(exc).__name__])
                continue
        scale = max(float(np.max(np.abs(tb.values[i]))), 1e-300)
        for th, d in zs:
            sTM = np.sign(Tp[i]) * (np.sign(d) if abs(d) > db * scale else 0)
            if sTM < 0:
                verdict, why = "unstable", "tangent-saddle: T'M'<0"
            elif sTM > 0 and C[0] < 0:
                verdict, why = "unstable", "tangent-expansion: T'M'>0 and C_T<0"
            elif np.any(C[1:] < 0):
                verdict, why = "unstable", "normal-expansion: C_N<0"
            elif sTM > 0 and np.all(C > 0):
                verdict, why = "asymptotically-stable", "all-contracting"
            else:
                verdict, why = "inconclusive", "dead-band"
            rows.append([tb.omega_bar[i], o.h, th, d, Tp[i], verdict, why])
    return rows


def _analyse_orbit(ctx, o, pert):
    spec = _spec(ctx, o)
    orb = o.with_cycles(spec.m)
    c = melnikov(orb, pert, spec, grid_size=cfgmod.get(ctx.cfg, "melnikov", "grid_size"), tol=ctx.tol)
    try:
        subs = decompose(orb)
    except NonGenericSpectrumError as exc:
        return dict(orbit=orb, curve=c, subspaces=None, error=str(exc))
    cr = contractions(orb, pert, spec, subs)
    Tp, src = _period_slope(ctx, o)
    return dict(orbit=orb, curve=c, subspaces=subs, contraction=cr, T_prime=Tp, T_source=src,
                summary=spectral_summary(orb))


def _verdicts(ctx):
    if "verdicts" in ctx.cache:
        return ctx.cache["verdicts"]
    orbs = select_orbits(ctx)
    pert = cfgmod.perturbation_builder(ctx.cfg, ctx.system)()
    eps_list = cfgmod.get(ctx.cfg, "verify", "epsilon")
    eps_ref = max(eps_list) if eps_list else None
    results = []
    for oi, an in enumerate(ctx.pmap(lambda o: _analyse_orbit(ctx, o, pert), orbs)):
        entries = []
        for zi, z in enumerate(an["curve"].zeros):
            if an["subspaces"] is None:
                entries.append((zi, z, None, {}, {}))
                continue
            m_scale = an["curve"].scale * TWO_PI / an["curve"].period
            v = classify(an["orbit"], z, an["T_prime"], an["contraction"], an["summary"], tol=ctx.tol,
                         m_scale=m_scale)
            preds, validity = {}, {}
            if eps_ref:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    preds, validity = predict_multipliers(an["orbit"], an["contraction"], eps_ref, an["T_prime"],
                                                          z.derivative, tol=ctx.tol, override=True)
            entries.append((zi, z, v, preds, validity))
        results.append((oi, an, entries))
    ctx.cache["verdicts"] = results
    return results


def cmd_classify(ctx):
    results = _verdicts(ctx)
    n = ctx.system.n
    rows, text = [], []
    cols = ["orbit", "h", "omega", "zero", "s0", "theta0", "zero_type", "M_prime", "T_prime", "C_T"]
    cols += [f"C_N{k + 1}" for k in range(n - 1)]
    cols += ["C_full", "verdict", "clauses", "flags"]
    cols += [f"pred_abs_mu{k + 1}" for k in range(2 * n)]
    cols += ["eps", "eps_guard"]
    for oi, an, entries in results:
        o = an["orbit"]
        text.append(f"orbit {oi}: h={o.h:.10g} omega={o.omega:.10g} tau={o.tau:.10g} m={o.m}")
        if not entries:
            text.append("  Melnikov function has no zeros: no perturbed orbit is predicted near this orbit")
        for zi, z, v, preds, validity in entries:
            if v is None:
                text.append(f"  zero {zi} at s0={z.s0:.10g}: non-generic spectrum ({an.get('error', '')})")
                continue
            cr = an["contraction"]
            CN = list(cr.normal) + [float("nan")] * (n - 1 - len(cr.normal))
            pm = list(np.concatenate(list(preds.values()))) if preds else []
            pm += [float("nan")] * (2 * n - len(pm))
            rows.append([oi, o.h, o.omega, zi, z.s0, z.theta, z.kind, z.derivative, an["T_prime"], cr.tangent,
                         *CN, cr.full_space, v.verdict, ";".join(v.clauses), ";".join(v.flags), *pm,
                         validity.get("eps", float("nan")), validity.get("status", "")])
            why = ", ".join(v.clauses) if v.clauses else "; ".join(v.reason.get("missing", []))
            text.append(
                f"  zero {zi} s0={z.s0:.10g} ({z.kind}) M'={z.derivative:.6g} T'={an['T_prime']:.6g} "
                f"C_T={cr.tangent:.6g} C_N={[round(float(c), 8) for c in cr.normal]} -> {v.verdict} [{why}]"
            )
    ctx.write("verdicts.csv", cols, rows)
    csvio.atomic_write(ctx.out / "verdicts.txt", "\n".join(text) + "\n")
    ctx.written.append("verdicts.txt")
    return results


def _verify_case(ctx, an, zi, z, v, eps):
    o = an["orbit"]
    spec = _spec(ctx, o)
    delta = spec.m * o.tau / spec.l
    sys_ = ctx.system.with_perturbation(cfgmod.perturbation_builder(ctx.cfg, ctx.system)())
    vc = VerifyConfig(
        epsilon=float(eps),
        forcing_period_delta=delta,
        cycles_l=spec.l,
        newton_tol=cfgmod.get(ctx.cfg, "verify", "newton_tol"),
        max_iter=cfgmod.get(ctx.cfg, "verify", "max_iter"),
        persistence_radius=cfgmod.get(ctx.cfg, "verify", "persistence_radius"),
        integration_tol=ctx.tol.integration,
    )
    scale = float(np.max(np.linalg.norm(o.samples(128)[1], axis=1)))
    seed = o.state(z.s0 if z is not None else 0.0)
    try:
        po = find_perturbed_orbit(sys_, vc, seed=seed, reference_scale=scale)
    except NoOrbitFoundError as exc:
        return dict(converged=False, message=str(exc).split(";")[0])
    mu, mod, label = measured_multipliers(po, ctx.tol.deadband_multiplier)
    out = dict(converged=True, period=po.period, mu=mu, label=label, residual=po.residual)
    if v is not None and an["subspaces"] is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            preds, validity = predict_multipliers(o, an["contraction"], eps, an["T_prime"], z.derivative,
                                                  tol=ctx.tol, override=True)
        out["guard"] = validity.get("status", "")
        groups = assign_to_subspaces(mu, an["subspaces"])
        meas, pred = [], []
        for k, (key, pv) in enumerate(preds.items()):
            meas.extend(np.sort(np.abs(groups[k])))
            pred.extend(np.sort(pv))
        out.update(meas=np.array(meas), pred=np.array(pred))
    return out


def _agreement(verdict, label):
    if verdict == "asymptotically-stable":
        return label == "stable"
    if verdict == "unstable":
        return label == "unstable"
    return ""


def cmd_verify(ctx):
    results = _verdicts(ctx)
    eps_list = sorted(cfgmod.get(ctx.cfg, "verify", "epsilon"))
    n = ctx.system.n
    cases = []
    for oi, an, entries in results:
        if not entries:
            # no zeros: seeds at a few phases document that nothing persists
            for k in range(4):
                z = MelnikovZero(k * an["orbit"].period / 4, "none", float("nan"), float("nan"))
                cases.append((oi, an, -1 - k, z, None))
        for zi, z, v, _, _ in entries:
            cases.append((oi, an, zi, z, v))
    jobs = [(c, eps) for c in cases for eps in eps_list]

    def run(job):
        (oi, an, zi, z, v), eps = job
        try:
            return _verify_case(ctx, an, zi, z, v, eps)
        except NnmStabError as exc:
            return dict(converged=False, message=f"error: {exc}", failed=True)

    outs = ctx.pmap(run, jobs)
    cols = ["eps", "orbit", "zero", "s0", "converged", "period"]
    cols += [f"meas_abs_mu{k + 1}" for k in range(2 * n)] + [f"pred_abs_mu{k + 1}" for k in range(2 * n)]
    cols += ["max_error", "predicted_verdict", "measured_label", "agreement", "eps_guard", "note"]
    rows = []
    series = {}
    failed = False
    nanv = [float("nan")] * (2 * n)
    for ((oi, an, zi, z, v), eps), r in zip(jobs, outs):
        verdict = v.verdict if v is not None else ("no-zero" if zi < 0 else "non-generic")
        if not r["converged"]:
            failed |= bool(r.get("failed"))
            rows.append([eps, oi, zi, z.s0, False, float("nan"), *nanv, *nanv, float("nan"), verdict,
                         "no-orbit", verdict == "no-zero", "", r["message"]])
            continue
        if "pred" in r:
            meas, pred = list(r["meas"]), list(r["pred"])
            err = float(np.max(np.abs(r["meas"] - r["pred"])))
        else:
            meas, pred, err = list(np.sort(np.abs(r["mu"]))), nanv, float("nan")
        rows.append([eps, oi, zi, z.s0, True, r["period"], *meas, *pred, err, verdict, r["label"],
                     _agreement(verdict, r["label"]), r.get("guard", ""), ""])
        if np.isfinite(err):
            series.setdefault((oi, zi), []).append((eps, err))
    ctx.write("verification.csv", cols, rows)
    orows = []
    for (oi, zi), pts in sorted(series.items()):
        pts.sort()
        if len(pts) >= 2:
            e = np.array([p[0] for p in pts])
            er = np.array([p[1] for p in pts])
            sl = empirical_orders(e, er)
            for k in range(len(sl)):
                orows.append([oi, zi, e[k], e[k + 1], er[k], er[k + 1], sl[k]])
    if orows:
        ctx.write("verification_orders.csv", ["orbit", "zero", "eps_lo", "eps_hi", "err_lo", "err_hi", "order"],
                  orows)
    if failed:
        raise PartialResults("some verification cases failed; see verification.csv")
    return rows


COMMANDS = {
    "backbone": cmd_backbone,
    "melnikov": cmd_melnikov,
    "classify": cmd_classify,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


# ----------------------------------------------------------------------------
# argument handling
# ----------------------------------------------------------------------------


COMMAND_HELP = {
    "backbone": "continue the orbit family; write backbone.csv and multipliers.csv",
    "melnikov": "Melnikov curves, zeros and harmonic fits of the selected orbits",
    "classify": "stability verdicts and predicted multipliers at each Melnikov zero",
    "verify": "solve for the perturbed orbits and compare measured with predicted multipliers",
    "sweep": "Melnikov zero level sets over the family for each swept parameter value",
}


def make_parser():
    p = argparse.ArgumentParser(prog="nnmstab", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"nnmstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMAND_HELP[name])
        sp.add_argument("--config", required=True, help="scenario TOML file")
        sp.add_argument("--out", help="output directory (mirrors [output].dir)")
        sp.add_argument("--threads", type=int, help="worker threads (mirrors [run].threads)")
        sp.add_argument("--seed-orbit", help="file with 2n state values and a period")
        sp.add_argument("--epsilon", help="comma-separated eps list (mirrors [verify].epsilon)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VAL",
                        help="set a config value, e.g. perturbation.params.alpha=0.5")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _merge_flag(cfg, section, key, value, flag):
    """Mirror flags fill missing config keys; the config file wins on conflict."""
    if value is None:
        return cfg
    cur = cfg.get(section, {}).get(key)
    if cur is not None and cur != value:
        warnings.warn(f"{flag} ignored: config file sets [{section}].{key} = {cur!r}", stacklevel=2)
        return cfg
    cfg.setdefault(section, {})[key] = value
    return cfg


def prepare(args):
    cfg = cfgmod.load(args.config)
    for ov in args.override:
        cfg = cfgmod.apply_override(cfg, ov)
    _merge_flag(cfg, "output", "dir", args.out, "--out")
    _merge_flag(cfg, "run", "threads", args.threads, "--threads")
    if args.epsilon is not None:
        try:
            eps = [float(e) for e in args.epsilon.split(",") if e.strip()]
        except ValueError as exc:
            raise ConfigError(f"--epsilon must be a comma-separated list of numbers: {exc}") from exc
        _merge_flag(cfg, "verify", "epsilon", eps, "--epsilon")
    cfgmod.validate(cfg)
    out = Path(cfgmod.get(cfg, "output", "dir"))
    if args.seed_orbit is not None and not Path(args.seed_orbit).is_file():
        raise ConfigError(f"seed orbit file {args.seed_orbit} not found")
    return RunContext(cfg, out, cfgmod.get(cfg, "run", "threads"), args.seed_orbit)


def _manifest(ctx, command, status):
    data = dict(
        tool="nnmstab",
        version=__version__,
        command=command,
        status=status,
        config_sha256=cfgmod.config_hash(ctx.cfg),
        tolerances=ctx.tol.as_dict(),
        files=sorted(set(ctx.written)),
    )
    csvio.atomic_write(ctx.out / "manifest.json", json.dumps(data, indent=2, sort_keys=True) + "\n")


def main(argv=None):
    from filelock import FileLock, Timeout

    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = prepare(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ctx.out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(ctx.out / ".nnmstab.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        print(f"output directory {ctx.out} is in use by another nnmstab process", file=sys.stderr)
        return EXIT_CONFIG
    status, code = "ok", EXIT_OK
    try:
        csvio.atomic_write(ctx.out / "config.toml", cfgmod.dumps(ctx.cfg))
        COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        status, code = "config-error", EXIT_CONFIG
    except PartialResults as exc:
        print(f"partial results: {exc}", file=sys.stderr)
        status, code = "partial", EXIT_PARTIAL
    except NnmStabError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        status, code = "numerical-failure", EXIT_NUMERICAL
        if ctx.written:
            status, code = "partial", EXIT_PARTIAL
    finally:
        try:
            _manifest(ctx, args.command, status)
        finally:
            lock.release()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
