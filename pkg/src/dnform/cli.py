"""Command-line front end.

Every subcommand rebuilds the pipeline it needs (model, modes, STEP,
mapping, reduced dynamics, continuation) from the model, an optional TOML
configuration file and flags, writes its artifacts to ``--out`` and a
``manifest.json`` describing inputs, settings, versions and output hashes.

Modes are numbered from 1 on the command line and in configuration files;
archives and model files use 0-based indices.

Exit status: 0 success, 2 invalid input, 3 numerical failure,
4 refusal by the resonance policy.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import warnings

import numpy as np

from . import __version__
from .errors import DnformError, NumericalError, ResonancePolicyError, ValidationError

log = logging.getLogger("dnform")

__all__ = ["main", "build_parser", "load_config"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_POLICY = 0, 2, 3, 4

COMMANDS = ("eig", "step", "dnf", "rom", "backbone", "frf", "reconstruct", "verify")

# configuration keys accepted per section (flags override the file)
_SECTIONS = {
    "model": {"source", "beam"},
    "modes": {"count", "masters"},
    "dnf": {"order", "eps_res", "resonances", "variant", "nonlinear_damping"},
    "damping": {"zeta_m", "zeta_k"},
    "forcing": {"dof", "node", "direction", "amplitude"},
    "probe": {"dof", "node", "direction"},
    "continuation": {"system", "mode", "formulation", "n_harmonics", "n_time_samples", "tol",
                     "max_newton", "max_steps", "step", "step_min", "step_max", "kick",
                     "omega_window", "amplitude_cap", "x_scale"},
}


def _data_path(name):
    return os.path.join(os.path.dirname(__file__), "data", name)


def load_config(path):
    """Read and check a TOML configuration file.

    Returns
    -------
    dict
        Section name to mapping; unknown sections or keys are rejected.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read configuration {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValidationError(f"{path}: unknown sections {sorted(unknown)}")
    for sec, body in data.items():
        bad = set(body) - _SECTIONS[sec]
        if bad:
            raise ValidationError(f"{path}: unknown keys in [{sec}]: {sorted(bad)}")
    return data


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def build_parser():
    """Argument parser with one sub-parser per command."""
    p = argparse.ArgumentParser(prog="dnform", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"dnform {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("input and output")
    g.add_argument("--model", help="'beam' (default), 'demo', a beam .toml or a polynomial model file")
    g.add_argument("--config", help="TOML configuration file")
    g.add_argument("--out", default="dnform-out", help="output directory (default: %(default)s)")
    g.add_argument("-v", "--verbose", action="count", default=0)

    modes = argparse.ArgumentParser(add_help=False)
    g = modes.add_argument_group("modes")
    g.add_argument("--modes", type=int, help="number of computed modes (default 10, capped at n_dof)")
    g.add_argument("--masters", type=_int_list, help="master modes, 1-based, e.g. '1,3' (default 1)")

    dnf = argparse.ArgumentParser(add_help=False)
    g = dnf.add_argument_group("normal form")
    g.add_argument("--order", type=int, choices=(2, 3), help="mapping order (default 3)")
    g.add_argument("--eps-res", type=float, help="relative resonance threshold (default 1e-3)")
    g.add_argument("--resonance", action="append", dest="resonances",
                   help="declared relation, 1-based: '3=1+1+1' or tuple '3,1,1,1' (repeatable)")
    g.add_argument("--zeta-m", type=float, help="mass-proportional damping coefficient (1/s)")
    g.add_argument("--zeta-k", type=float, help="stiffness-proportional damping coefficient (s)")

    rom = argparse.ArgumentParser(add_help=False)
    g = rom.add_argument_group("reduced dynamics")
    g.add_argument("--variant", choices=("O2-full", "O3-trivial", "O3-resonant"),
                   help="monomial selection (default: O2-full for order 2, O3-trivial for order 3)")
    g.add_argument("--nonlinear-damping", choices=("none", "full", "self"),
                   help="keep the damping-induced C terms (O2-full only)")

    force = argparse.ArgumentParser(add_help=False)
    g = force.add_argument_group("forcing and probe")
    g.add_argument("--force-dof", type=int, help="forced dof (0-based)")
    g.add_argument("--force-node", type=int, help="forced node (beam)")
    g.add_argument("--force-direction", help="forced direction (beam, default transverse)")
    g.add_argument("--force-amplitude", type=float, help="force amplitude (N)")
    g.add_argument("--probe-dof", type=int, help="amplitude dof (0-based)")
    g.add_argument("--probe-node", type=int, help="amplitude node (beam)")
    g.add_argument("--probe-direction", help="amplitude direction (beam, default transverse)")

    cont = argparse.ArgumentParser(add_help=False)
    g = cont.add_argument_group("continuation")
    g.add_argument("--system", choices=("rom", "full"), help="continued system (default rom)")
    g.add_argument("--mode", type=int, help="followed or forced mode, 1-based (default: first master)")
    g.add_argument("--harmonics", type=int, dest="n_harmonics", help="harmonics H (default 9)")
    g.add_argument("--time-samples", type=int, dest="n_time_samples",
                   help="AFT samples (default 2^ceil(log2(4H+2)))")
    g.add_argument("--tol", type=float, help="corrector tolerance (default 1e-8)")
    g.add_argument("--max-steps", type=int, help="continuation steps (default 400)")
    g.add_argument("--step", type=float, help="initial arclength step (default 0.05)")
    g.add_argument("--step-min", type=float, help="minimum step (default 1e-6)")
    g.add_argument("--step-max", type=float, help="maximum step (default 0.2)")
    g.add_argument("--kick", type=float, help="relative backbone start-up force (default 1e-4)")
    g.add_argument("--omega-window", type=_float_list,
                   help="'lo,hi' as ratios of the mode frequency")
    g.add_argument("--amplitude-cap", type=float, help="stop at this probe amplitude (m)")
    g.add_argument("--x-scale", type=float, help="displacement scale of the continuation")
    g.add_argument("--formulation", choices=("even", "phase"),
                   help="backbone series: cosine-only (default) or phase-anchored")

    sub.add_parser("eig", parents=[common, modes], help="eigenfrequencies and mode shapes") \
        .add_argument("--shapes", action="store_true", help="also export mode shapes")
    sub.add_parser("step", parents=[common, modes], help="modal quadratic/cubic tensors by STEP")
    sub.add_parser("dnf", parents=[common, modes, dnf], help="mapping tensors")
    sub.add_parser("rom", parents=[common, modes, dnf, rom, force], help="reduced dynamics")
    sub.add_parser("backbone", parents=[common, modes, dnf, rom, force, cont],
                   help="backbone curve by harmonic balance")
    sub.add_parser("frf", parents=[common, modes, dnf, rom, force, cont],
                   help="forced response by harmonic balance")
    r = sub.add_parser("reconstruct", parents=[common, modes, dnf],
                       help="physical field from normal coordinates")
    r.add_argument("--R", type=_float_list, required=True, dest="R",
                   help="normal displacements, one per master")
    r.add_argument("--S", type=_float_list, dest="S", help="normal velocities (default 0)")
    r.add_argument("--velocity", choices=("mapping", "deduced"), default="mapping")
    v = sub.add_parser("verify", parents=[common], help="direct vs modal oracle suite")
    v.add_argument("--systems", type=int, default=10, help="random systems (default 10)")
    v.add_argument("--seed", type=int, default=0)
    return p


class _Run:
    """Resolved settings and lazily built pipeline stages of one invocation."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.cfg = load_config(args.config) if args.config else {}
        self.outputs = {}
        self.inputs = {}
        self._model = self._spectrum = self._tensors = None
        os.makedirs(args.out, exist_ok=True)

    # settings ------------------------------------------------------------
    def get(self, section, key, flag=None, default=None):
        val = getattr(self.args, flag or key, None)
        if val is not None:
            return val
        return self.cfg.get(section, {}).get(key, default)

    def settings(self):
        out = {}
        for sec, keys in _SECTIONS.items():
            for k in sorted(keys):
                flag = {"count": "modes"}.get(k, k)
                if sec in ("forcing", "probe"):
                    flag = f"{'force' if sec == 'forcing' else 'probe'}_{k}"
                v = self.get(sec, k, flag) if hasattr(self.args, flag) else self.cfg.get(sec, {}).get(k)
                if v is not None:
                    out[f"{sec}.{k}"] = v
        return out

    # pipeline ------------------------------------------------------------
    @property
    def model(self):
        if self._model is None:
            from .model import BeamConfig, assemble_vk_beam, load_polynomial_model

            src = self.args.model or self.cfg.get("model", {}).get("source", "beam")
            beam = dict(self.cfg.get("model", {}).get("beam", {}))
            if src == "demo":
                src = _data_path("two_dof.model")
            if src == "beam" or str(src).endswith(".toml"):
                if str(src).endswith(".toml"):
                    beam.update(load_config_beam(src))
                    self.inputs["model_sha256"] = _sha256(src)
                self._model = assemble_vk_beam(BeamConfig.from_mapping(beam))
                self.inputs["model"] = {"beam": beam} if src == "beam" else str(src)
            else:
                self._model = load_polynomial_model(src)
                self.inputs["model"] = os.path.basename(str(src))
                self.inputs["model_sha256"] = _sha256(src)
        return self._model

    @property
    def is_beam(self):
        return self.model.labels and self.model.labels[0][1] != "generalized"

    @property
    def masters(self):
        m = self.get("modes", "masters", default=[1])
        m = [int(v) for v in (m if isinstance(m, (list, tuple)) else [m])]
        if any(v < 1 for v in m):
            raise ValidationError(f"master modes are 1-based, got {m}")
        return tuple(v - 1 for v in m)

    @property
    def spectrum(self):
        if self._spectrum is None:
            from .eigen import solve_modes

            n = self.get("modes", "count", "modes", default=min(10, self.model.n_dof))
            self._spectrum = solve_modes(self.model, int(n), self.masters)
        return self._spectrum

    @property
    def declared(self):
        rels = self.get("dnf", "resonances", default=[]) or []
        from .resonance import parse_relation
        return tuple(str(parse_relation(r, self.spectrum.omegas, offset=1)) for r in rels)

    @property
    def damping(self):
        from .model import DampingSpec

        d = DampingSpec(float(self.get("damping", "zeta_m", default=0.0)),
                        float(self.get("damping", "zeta_k", default=0.0)))
        return None if d.is_zero else d

    @property
    def order(self):
        return int(self.get("dnf", "order", default=3))

    @property
    def tensors(self):
        if self._tensors is None:
            from .dnf import compute_dnf
            from .resonance import DEFAULT_TOL

            self._tensors = compute_dnf(self.model, self.spectrum, self.masters, self.order,
                                        damping=self.damping,
                                        tol=float(self.get("dnf", "eps_res", default=DEFAULT_TOL)),
                                        declared=self.declared)
        return self._tensors

    def rom(self):
        from .rom import assemble_rom

        t = self.tensors
        variant = self.get("dnf", "variant", default="O2-full" if t.order == 2 else "O3-trivial")
        nd = self.get("dnf", "nonlinear_damping", default="none")
        nd = None if nd == "none" else nd
        if variant == "O3-trivial" and any(e.kind != "trivial" for e in t.resonances.third_order):
            variant = "O3-resonant"
        return assemble_rom(t, variant, nonlinear_damping=nd)

    def _dof(self, section, prefix):
        dof = self.get(section, "dof", f"{prefix}_dof")
        node = self.get(section, "node", f"{prefix}_node")
        if dof is not None and node is not None:
            raise ValidationError(f"give either a {section} dof or a node, not both")
        if node is not None:
            return self.model.find_dof(int(node), self.get(section, "direction",
                                                           f"{prefix}_direction", "transverse"))
        if dof is not None:
            dof = int(dof)
            if not 0 <= dof < self.model.n_dof:
                raise ValidationError(f"{section} dof {dof} outside 0..{self.model.n_dof - 1}")
        return dof

    def forcing(self, required=False):
        from .hbm import ForcingSpec

        amp = self.get("forcing", "amplitude", "force_amplitude")
        dof = self._dof("forcing", "force")
        if amp is None or dof is None:
            if required:
                raise ValidationError("a forcing needs an amplitude and a dof or node")
            return None
        return ForcingSpec(dof, float(amp))

    def probe(self, mode):
        dof = self._dof("probe", "probe")
        if dof is None:
            dof = int(np.argmax(np.abs(self.spectrum.phis[:, mode])))
        return dof

    def hbm_config(self, omega_ref):
        from .hbm import HbmConfig

        keys = ("n_harmonics", "n_time_samples", "tol", "max_newton", "max_steps", "step",
                "step_min", "step_max", "kick", "amplitude_cap", "x_scale")
        data = {k: self.get("continuation", k) for k in keys}
        data = {k: v for k, v in data.items() if v is not None}
        win = self.get("continuation", "omega_window")
        if win is not None:
            if len(win) != 2:
                raise ValidationError("omega window needs two ratios 'lo,hi'")
            data["omega_window"] = (win[0] * omega_ref, win[1] * omega_ref)
        return HbmConfig.from_mapping(data)

    def mode(self):
        m = self.get("continuation", "mode")
        m = self.masters[0] if m is None else int(m) - 1
        if m < 0:
            raise ValidationError("modes are 1-based")
        return m

    # output --------------------------------------------------------------
    def path(self, name):
        return os.path.join(self.args.out, name)

    def wrote(self, name):
        self.outputs[name] = _sha256(self.path(name))

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.wrote(name)

    def write_text(self, name, text):
        with open(self.path(name), "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
        self.wrote(name)

    def manifest(self, status, message=""):
        from . import kernels
        import scipy

        if self.args.config:
            self.inputs["config"] = os.path.basename(self.args.config)
            self.inputs["config_sha256"] = _sha256(self.args.config)
        data = {
            "command": self.args.command,
            "arguments": _without_out(self.argv),
            "inputs": self.inputs,
            "settings": self.settings(),
            "defaults": {"eps_res": 1e-3, "shift_key_rtol": 1e-12, "rcond_min": 1e-13,
                         "cluster_tol": 1e-8},
            "versions": {"dnform": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version(), "kernel_backend": kernels.BACKEND},
            "status": status,
            "message": message,
            "outputs": dict(sorted(self.outputs.items())),
        }
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def load_config_beam(path):
    """Beam parameters from a TOML file (``[beam]`` table or top-level keys)."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"cannot read beam file {path}: {exc}") from None
    return data.get("beam", data)


def _without_out(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (tuple, set)):
        return list(v)
    return str(v)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _f(v):
    return f"{float(v):.12e}"


# commands ----------------------------------------------------------------

def cmd_eig(run):
    sp = run.spectrum
    f = sp.frequencies_hz
    lines = [f"{'mode':>4}  {'frequency (Hz)':>16}  {'omega (rad/s)':>16}  "
             f"{'ratio to mode 1':>15}"]
    for i in range(sp.n_computed):
        lines.append(f"{i + 1:>4}  {f[i]:>16.4f}  {sp.omegas[i]:>16.4f}  {f[i] / f[0]:>15.4f}")
    for c in sp.clusters:
        lines.append("clustered modes: " + ", ".join(str(m + 1) for m in c))
    table = "\n".join(lines)
    print(table)
    run.write_text("eigenfrequencies.txt", table)
    run.write_csv("eigenfrequencies.csv", ["mode_1", "frequency_Hz", "omega_rad_s", "ratio_1"],
                  [[i + 1, _f(f[i]), _f(sp.omegas[i]), _f(f[i] / f[0])] for i in range(sp.n_computed)])
    if run.args.shapes:
        labels = run.model.labels
        run.write_csv("mode_shapes.csv",
                      ["dof_index_1", "node_1", "direction_1"]
                      + [f"mode{m + 1}_m_per_kg05" for m in range(sp.n_computed)],
                      [[d, labels[d][0], labels[d][1]] + [_f(v) for v in sp.phis[d]]
                       for d in range(run.model.n_dof)])


def cmd_step(run):
    from .model import write_polynomial_model
    from .step import step_tensors

    sp, ms = run.spectrum, run.masters
    st = step_tensors(run.model, sp, ms)
    n = len(ms)
    g = np.array([[[st.g(p, i, j) for j in ms] for i in ms] for p in ms])
    h = np.array([[[[st.h(p, i, j, k) for k in ms] for j in ms] for i in ms] for p in ms])
    write_polynomial_model(run.path("modal_tensors.model"), np.eye(n), np.diag(sp.omegas[list(ms)] ** 2),
                           g, h)
    run.wrote("modal_tensors.model")
    print(f"{st.n_evaluations} force evaluations; modal tensors over masters "
          f"{[m + 1 for m in ms]} written to {run.path('modal_tensors.model')}")


def cmd_dnf(run):
    from .dnf import save_mapping

    t = run.tensors
    save_mapping(t, run.spectrum, run.path("mapping.npz"))
    run.wrote("mapping.npz")
    summary = t.resonances.summary()
    run.write_text("resonances.txt", summary)
    rows = [[r.stage, " ".join(str(i + 1) for i in r.indices), r.s + 1, _f(r.value),
             _f(r.orthogonality)] for r in t.residuals]
    run.write_csv("bordered_solves.csv",
                  ["stage", "modes_1", "border_mode_1", "retained_force_N", "orthogonality_1"], rows)
    print(summary)
    print(f"order {t.order} mapping over masters {[m + 1 for m in t.masters]} written "
          f"({len(t.residuals)} bordered solves)")


def cmd_rom(run):
    from .rom import save_rom

    rom = run.rom()
    fs = run.forcing()
    if fs is not None:
        rom = rom.with_forcing(run.tensors.phis[fs.dof] * fs.amplitude)
    save_rom(rom, run.path("rom.txt"))
    run.wrote("rom.txt")
    eqs = rom.equations()
    run.write_text("equations.txt", eqs)
    print(eqs)


def _branch_output(run, br, name, omega_ref, tensors=None, dof=None, damped=False):
    from .hbm import reconstructed_amplitude

    if tensors is not None:
        amp = reconstructed_amplitude(br, tensors, dof, damped=damped)
        br.to_csv(run.path(name), omega_ref=omega_ref, amplitude=amp, coeff_unit="m_kg05")
    else:
        amp = br.amplitude
        br.to_csv(run.path(name), omega_ref=omega_ref)
    run.wrote(name)
    folds = np.nonzero(br.fold)[0]
    print(f"{len(br)} points, stop: {br.reason}; folds at omega/omega_ref = "
          f"{[round(float(br.omega[i] / omega_ref), 6) for i in folds]}; "
          f"max probe amplitude {amp.max():.6e} m")


def cmd_backbone(run):
    from .hbm import FullSystem, RomSystem, backbone

    mode = run.mode()
    w0 = run.spectrum.omegas[mode]
    probe = run.probe(mode)
    cfg = run.hbm_config(w0)
    form = run.get("continuation", "formulation", default="even")
    if run.get("continuation", "system", default="rom") == "full":
        br = backbone(FullSystem(run.model), mode, cfg, probe=probe, formulation=form)
        _branch_output(run, br, "backbone_full.csv", w0)
    else:
        t = run.tensors
        if mode not in t.masters:
            raise ValidationError(f"mode {mode + 1} is not a master {[m + 1 for m in t.masters]}")
        loc = t.masters.index(mode)
        if cfg.amplitude_cap is not None:
            # the cap is physical; the ROM is capped in normal coordinates
            from dataclasses import replace
            cfg = replace(cfg, amplitude_cap=cfg.amplitude_cap / abs(t.phis[probe, loc]))
        br = backbone(RomSystem(run.rom()), loc, cfg, probe=loc, formulation=form)
        _branch_output(run, br, "backbone_rom.csv", w0, t, probe)


def cmd_frf(run):
    from .hbm import FullSystem, RomSystem, frf

    mode = run.mode()
    w0 = run.spectrum.omegas[mode]
    fs = run.forcing(required=True)
    probe = run.probe(mode)
    cfg = run.hbm_config(w0)
    if cfg.omega_window[0] is None or cfg.omega_window[1] is None:
        raise ValidationError("frf needs --omega-window lo,hi")
    if run.get("continuation", "system", default="rom") == "full":
        br = frf(FullSystem(run.model, run.damping, fs), cfg, probe=probe)
        _branch_output(run, br, "frf_full.csv", w0)
    else:
        t = run.tensors
        sysr = RomSystem.from_rom(run.rom(), t, fs)
        loc = t.masters.index(mode) if mode in t.masters else 0
        br = frf(sysr, cfg, probe=loc)
        _branch_output(run, br, "frf_rom.csv", w0, t, probe)


def cmd_reconstruct(run):
    from .rom import NormalState, reconstruct

    t = run.tensors
    R = np.asarray(run.args.R, dtype=float)
    S = np.zeros_like(R) if run.args.S is None else np.asarray(run.args.S, dtype=float)
    if R.size != t.n_masters or S.size != t.n_masters:
        raise ValidationError(f"give one R and S value per master ({t.n_masters})")
    X, Y = reconstruct(t, NormalState(R, S), velocity=run.args.velocity)
    labels = run.model.labels
    units = ["rad" if lab[1] == "rotation" else "m" for lab in labels]
    run.write_csv("reconstruction.csv",
                  ["dof_index_1", "node_1", "direction_1", "unit", "displacement_unit",
                   "velocity_unit_per_s"],
                  [[d, labels[d][0], labels[d][1], units[d], _f(X[d]), _f(Y[d])]
                   for d in range(len(X))])
    trans = np.array([u == "m" for u in units])
    k = int(np.argmax(np.where(trans, np.abs(X), -1.0)))
    print(f"largest translation {X[k]:.6e} m at dof {k} {labels[k]}")


def cmd_verify(run):
    from .oracle import equivalence_suite

    err = equivalence_suite(n_systems=run.args.systems, seed=run.args.seed)
    rows = [[k, _f(v)] for k, v in sorted(err.items())]
    for k, v in rows:
        print(f"{k:<28} max relative error {v}")
    run.write_csv("verify.csv", ["check", "max_relative_error_1"], rows)


_DISPATCH = {c: globals()[f"cmd_{c}"] for c in COMMANDS}


def main(argv=None):
    """Entry point; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verbose == 0:
        warnings.simplefilter("ignore", RuntimeWarning)
    run = None
    try:
        run = _Run(args, sys.argv[1:] if argv is None else argv)
        _DISPATCH[args.command](run)
    except ResonancePolicyError as exc:
        return _fail(run, EXIT_POLICY, "resonance policy", exc)
    except NumericalError as exc:
        return _fail(run, EXIT_NUMERICAL, "numerical failure", exc)
    except (ValidationError, DnformError) as exc:
        return _fail(run, EXIT_INVALID, "invalid input", exc)
    except OSError as exc:
        return _fail(run, EXIT_INVALID, "invalid input", exc)
    run.manifest("ok")
    return EXIT_OK


def _fail(run, code, what, exc):
    print(f"dnform: {what}: {exc}", file=sys.stderr)
    if run is not None:
        try:
            run.manifest(what, str(exc))
        except DnformError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
