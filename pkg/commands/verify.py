"""
Invariant self-check command blueprint.
"""
import json
import os

import click
import numpy as np
from flask import Blueprint, current_app
from joblib import Parallel, delayed

from middleware.decorators import handle_exit_code
from services.dynamics import TimeGrid, frame_equivalence, propagate_closed, propagate_unitary
from services.ecd.circuit import compose_steps, decompose_rotation, rotation_matrix
from services.ecd.identities import error_slopes, position_momentum_pair, verify_commutator_identities
from services.ecd.synthesis import gaussian_displacement
from services.errors import SimulationError
from services.grape.base import TransmonControl
from services.grape.optimizer import DetuningGrid, PulseConstraints, PulseProblem
from services.hilbert import (
    QuantumState,
    bellcat_state,
    coherent_state,
    cutoff_for,
    displacement_operator,
    embed_ket,
    fock_state,
    joint_characteristic,
)
from services.model import DerivedNonlinearities, SystemParams, derive_nonlinearities, exact_dispersive_shifts, hz

verify_bp = Blueprint('verify', __name__, cli_group=None)

DISPERSIVE_RATIOS = (0.02, 0.035, 0.05)
CHI_TOLERANCE = 0.05
KERR_TOLERANCE = 0.15
GRADIENT_TOLERANCE = 1e-5
GRADIENT_DIRECTIONS = 20
SLOPE_RANGE = (2.8, 3.2)
ROTATION_ANGLES = 100
ROTATION_TOLERANCE = 1e-12
FRAME_CASES = 10
FRAME_TOLERANCE = 1e-6
FRAME_DIMS = (2, 10, 10)
FRAME_DT = 1e-9
# exaggerated so that every displaced-frame term shows up in the overlap
FRAME_NONLINEARITIES = DerivedNonlinearities(chi=(hz(-300e3), hz(-250e3)), chi_p=(hz(200e3), hz(150e3)),
                                             K=(hz(-50e3), hz(-40e3)), K12=hz(-60e3), K_q=hz(-200e6))
VERIFY_SEED = int(os.getenv('BOSONIC_CTRL_VERIFY_SEED', '7'))


def _check(suite, name, value, threshold, passed):
    return {'suite': suite, 'check': name, 'value': float(value), 'threshold': threshold, 'passed': bool(passed)}


def check_hilbert():
    rows = []
    for alpha in (0.5, 2.0, 1.5 + 1.5j):
        dim = cutoff_for(alpha)
        norm_error = abs(coherent_state(alpha, dim).norm() - 1.0)
        rows.append(_check('hilbert', f'coherent_norm[{alpha}]', norm_error, 1e-12, norm_error < 1e-12))
        d = displacement_operator(alpha, dim)
        unitarity = np.linalg.norm(d.conj().T @ d - np.eye(dim), 2)
        rows.append(_check('hilbert', f'displacement_unitary[{alpha}]', unitarity, 1e-10, unitarity < 1e-10))
    dim = cutoff_for(1.5)
    origin = abs(joint_characteristic(bellcat_state(1.5, (dim, dim)).to_density(), 0.0, 0.0) - 1.0)
    rows.append(_check('hilbert', 'characteristic_origin', origin, 1e-12, origin < 1e-12))
    return rows


def weak_drives(alpha_1, alpha_2, dt=FRAME_DT, idle=16):
    """Gaussian drive pair that leaves each cavity near the given amplitude, followed by idle samples."""
    shape = np.concatenate([gaussian_displacement(6e-9, dt), np.zeros(idle)])
    # alpha(t) ~ -i integral of Omega while chi t stays small
    area = np.sum(shape) * dt
    return [1j * alpha_1 / area * shape, 1j * alpha_2 / area * shape]


def check_model():
    """
    Perturbative chi and K against lab-frame diagonalization at Delta/2pi = 8 GHz, and
    rotating against displaced-frame propagation on weak drives.
    """
    rows = []
    base = SystemParams(omega_q=hz(5e9), K_q=hz(-200e6), omega=(hz(13e9), hz(13e9)), g=(0.0, 0.0))
    for ratio in DISPERSIVE_RATIOS:
        g = ratio * base.delta[0]
        params = SystemParams(omega_q=base.omega_q, K_q=base.K_q, omega=base.omega, g=(g, g))
        nl = derive_nonlinearities(params)
        exact = exact_dispersive_shifts(params, mode=0)
        chi_error = abs(nl.chi[0] - exact['chi']) / abs(exact['chi'])
        kerr_error = abs(nl.K[0] - exact['K']) / abs(exact['K'])
        rows.append(_check('model', f'chi[g/Delta={ratio}]', chi_error, CHI_TOLERANCE, chi_error < CHI_TOLERANCE))
        rows.append(_check('model', f'kerr[g/Delta={ratio}]', kerr_error, KERR_TOLERANCE, kerr_error < KERR_TOLERANCE))

    rng = np.random.default_rng(VERIFY_SEED)
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    psi0 = QuantumState.ket(embed_ket(plus, fock_state(0, FRAME_DIMS[1]), fock_state(0, FRAME_DIMS[2])), FRAME_DIMS)
    for case in range(FRAME_CASES):
        amplitudes = 0.4 * rng.random(2) * np.exp(2j * np.pi * rng.random(2))
        drives = weak_drives(*amplitudes)
        errors = frame_equivalence(FRAME_NONLINEARITIES, drives, FRAME_DT, psi0, range(0, len(drives[0]), 4))
        worst = max(errors.values())
        rows.append(_check('model', f'frame_equivalence[{case}]', worst, FRAME_TOLERANCE, worst < FRAME_TOLERANCE))
    return rows


def check_dynamics():
    rng = np.random.default_rng(VERIFY_SEED)
    dim = 6
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h0 = hz(1e6) * (m + m.conj().T)
    h1 = hz(1e6) * np.diag(np.arange(dim, dtype=float))

    def hamiltonian(t):
        return h0 + np.cos(hz(5e6) * t) * h1

    grid = TimeGrid(dt=1e-9, n_steps=200)
    u = propagate_unitary(hamiltonian, dim, grid)
    unitarity = np.linalg.norm(u.conj().T @ u - np.eye(dim), 2)
    psi0 = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    psi0 = QuantumState.ket(psi0 / np.linalg.norm(psi0), (dim,))
    final = propagate_closed(hamiltonian, psi0, grid).final
    norm_error = abs(final.norm() - 1.0)
    agreement = np.linalg.norm(final.data - u @ psi0.data)
    return [
        _check('dynamics', 'propagator_unitary', unitarity, 1e-10, unitarity < 1e-10),
        _check('dynamics', 'closed_norm', norm_error, 1e-10, norm_error < 1e-10),
        _check('dynamics', 'closed_matches_propagator', agreement, 1e-10, agreement < 1e-10),
    ]


def check_grape(workers=1):
    """Adjoint gradient of the closed cost against central differences along random directions."""
    rng = np.random.default_rng(VERIFY_SEED)
    control = TransmonControl(hz(-200e6), levels=4, dt=0.5e-9)
    problem = PulseProblem(control, np.pi, 20e-9, DetuningGrid.standard(), PulseConstraints())
    z = 0.3 * rng.standard_normal(problem.size)
    _, grad = problem(z)
    directions = rng.standard_normal((GRADIENT_DIRECTIONS, problem.size))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    h = 1e-6 * max(1.0, float(np.linalg.norm(z)))

    def central(d):
        return (problem(z + h * d)[0] - problem(z - h * d)[0]) / (2 * h)

    numeric = np.array(Parallel(n_jobs=workers)(delayed(central)(d) for d in directions))
    analytic = directions @ grad
    error = np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic)
    return [_check('grape', 'gradient_vs_central_differences', error, GRADIENT_TOLERANCE, error < GRADIENT_TOLERANCE)]


def check_identities():
    rows = []
    a, b = position_momentum_pair(8)
    slopes = error_slopes(verify_commutator_identities(a, b))
    lo, hi = SLOPE_RANGE
    for name, slope in slopes.items():
        rows.append(_check('identities', f'{name}_slope', slope, list(SLOPE_RANGE), lo <= slope <= hi))

    rng = np.random.default_rng(VERIFY_SEED)
    worst = 0.0
    for theta, phi in rng.uniform(-np.pi, np.pi, size=(ROTATION_ANGLES, 2)):
        u = compose_steps(decompose_rotation(theta, phi))
        # overlap up to a global phase
        worst = max(worst, 1.0 - abs(np.trace(rotation_matrix(theta, phi).conj().T @ u)) / 2)
    rows.append(_check('identities', 'rotation_decomposition', worst, ROTATION_TOLERANCE, worst < ROTATION_TOLERANCE))
    return rows


SUITES = {
    'hilbert': check_hilbert,
    'model': check_model,
    'dynamics': check_dynamics,
    'grape': check_grape,
    'identities': check_identities,
}


@verify_bp.cli.command('verify')
@click.option('--suite', 'suites', multiple=True, type=click.Choice(sorted(SUITES)),
              help='Suite to run (repeatable; all by default)')
@click.option('--workers', type=int, default=None, help='Workers for the finite-difference checks')
@handle_exit_code
def verify_command(suites, workers):
    """
    Run the invariant suites in-process and print one row per check.

    Exits with code 4 when any check fails.
    """
    selected = suites or tuple(SUITES)
    rows = []
    for suite in selected:
        current_app.logger.info("verify: running %s", suite)
        rows.extend(SUITES[suite](workers or 1) if suite == 'grape' else SUITES[suite]())
    failed = [r for r in rows if not r['passed']]
    if failed:
        click.echo(json.dumps({'checks': rows}, sort_keys=True))
        raise SimulationError(f"{len(failed)} of {len(rows)} checks failed")
    return {'checks': rows}
