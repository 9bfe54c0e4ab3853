"""Independent reference values for the integration tests.

Everything here is computed with numpy/scipy only; the printed numbers are
frozen into the Rust tests. Re-run with `python3 scripts/oracles.py`.
"""

import numpy as np
from scipy import integrate, linalg, signal

np.set_printoptions(precision=17)


def lqr(a, b, q, r):
    p = linalg.solve_continuous_are(a, b, q, r)
    return -np.linalg.solve(r, b.T @ p)


def flight():
    al, be, ga, de = 90.62, -42.15, -13.22, 0.1
    a = np.zeros((15, 15))
    b = np.zeros((15, 4))
    fol = np.array([[0, 1, 0, 0], [0, al, be, ga], [0, 0, 0, 1], [0, al / de, (be + 1) / de, ga / de]])
    lead = np.array([[al, be, ga], [0, 0, 1], [al / de, (be + 1) / de, ga / de]])
    for i in range(3):
        o = 4 * i
        a[o:o + 4, o:o + 4] = fol
        a[o, o + 5] = -1.0
        b[o + 1, i] = 1.0
        b[o + 3, i] = 1.0 / de
    a[12:15, 12:15] = lead
    b[12, 3] = 1.0
    b[14, 3] = 1.0 / de
    return a, b


def power():
    m = np.array([4.2, 3.0, 3.6, 2.9, 2.6, 3.5, 2.6, 2.4, 3.4, 4.6])
    d = np.array([1.0, 0.8, 0.9, 0.8, 0.7, 0.9, 0.7, 0.6, 0.8, 1.1])
    lines = [(0, 1, 1.6), (1, 2, 1.4), (2, 3, 1.5), (3, 4, 1.2), (4, 5, 1.3), (5, 6, 1.5), (6, 7, 1.1),
             (7, 8, 1.4), (8, 9, 1.7), (9, 0, 1.5), (0, 5, 0.9), (2, 7, 0.8), (4, 9, 1.0)]
    n = 10
    lap = np.zeros((n, n))
    for i, j, w in lines:
        lap[i, i] += w
        lap[j, j] += w
        lap[i, j] -= w
        lap[j, i] -= w
    a = np.block([[np.zeros((n, n)), np.eye(n)], [-lap / m[:, None], -np.diag(d / m)]])
    b = np.vstack([np.zeros((n, n)), np.diag(1 / m)])
    return a, b


def main():
    # Scalar LMI at fixed decision values: ξ = [x; q; e], ẋ = −x + q + e.
    p, lam, gam, l = 0.7, 0.4, 3.0, 0.5
    f = np.array([[-2 * p + 1 / gam + lam * l * l, p, p], [p, -lam, 0.0], [p, 0.0, -gam]])
    print("scalar_lmi", f.tolist())

    # Raw flight spectrum and the closed loop under LQR(1000 I, I).
    a, b = flight()
    print("flight_raw_abscissa", max(np.linalg.eigvals(a).real))
    k = lqr(a, b, 1000 * np.eye(15), np.eye(4))
    print("flight_closed_abscissa", max(np.linalg.eigvals(a + b @ k).real))
    print("flight_K_row0_col0", k[0, 0], "K_row1_col4", k[1, 4], "K_row2_col8", k[2, 8], "K_row3_col8", k[3, 8])

    a, b = power()
    k = lqr(a, b, np.eye(20), np.eye(10))
    print("power_closed_abscissa", max(np.linalg.eigvals(a + b @ k).real))

    # Scalar LQR A = 0, B = Q = R = 1.
    print("scalar_lqr", lqr(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))))

    # H∞ norm of (sI − A)⁻¹B for a lightly damped two-state plant.
    a2 = np.array([[0.0, 1.0], [-4.0, -0.4]])
    b2 = np.array([[0.0], [1.0]])
    w = np.logspace(-3, 3, 200001)
    g = [np.linalg.norm(np.linalg.solve(1j * wi * np.eye(2) - a2, b2), 2) for wi in w]
    i = int(np.argmax(g))
    res = __import__("scipy.optimize", fromlist=["minimize_scalar"]).minimize_scalar(
        lambda x: -np.linalg.norm(np.linalg.solve(1j * x * np.eye(2) - a2, b2), 2),
        bracket=(w[i - 1], w[i], w[i + 1]), tol=1e-12)
    print("hinf_two_state", -res.fun, "at", res.x)

    # Finite-horizon gain of 1/(s+1) to e = sin(ωt) on [0, 20), horizon 30,
    # trapezoid energies on the h = 1e-3 grid, exact continuous solution.
    h, T, act, om = 1e-3, 30.0, 20.0, 0.5
    t = np.arange(int(round(T / h)) + 1) * h
    e = np.where(t < act, np.sin(om * t), 0.0)
    # Zero-order hold of the excitation between grid points.
    x = np.zeros_like(t)
    for n in range(len(t) - 1):
        x[n + 1] = x[n] * np.exp(-h) + e[n] * (1 - np.exp(-h))
    ratio = np.sqrt(integrate.trapezoid(x * x, dx=h) / integrate.trapezoid(e * e, dx=h))
    print("sinusoid_ratio", ratio, "steady", 1 / np.sqrt(1 + om * om))

    # Surrogate on a hand-built two-step batch: scalar policy π(x) = 0.5 x,
    # σ = 0.2, sampling logprobs from π_old(x) = 0.4 x.
    sig = 0.2
    xs, us, adv = np.array([1.0, -2.0]), np.array([0.3, -0.5]), np.array([1.5, -0.7])

    def lp(u, mu):
        return -(u - mu) ** 2 / (2 * sig * sig) - np.log(sig * np.sqrt(2 * np.pi))

    ratios = np.exp(lp(us, 0.5 * xs) - lp(us, 0.4 * xs))
    print("surrogate", float(np.sum(ratios * adv)))

    # Linear policy K = [[1, -2, 0.5]] on a three-state trajectory.
    kk = np.array([[1.0, -2.0, 0.5]])
    traj = np.array([[0.1, 0.2, -0.3], [0.4, -0.1, 0.2], [-0.2, 0.3, 0.1]])
    uprev = [None, np.array([0.25]), np.array([-0.4])]
    explore = sum(float(np.sum((uprev[t] - kk @ traj[t]) ** 2)) for t in (1, 2))
    print("linear_penalties explore", explore, "smooth", 3 * float(np.sum(kk * kk)))

    # CG oracle.
    hmat = np.array([[4.0, 1.0, 0.5, 0.0, 0.2], [1.0, 3.0, 0.3, 0.1, 0.0], [0.5, 0.3, 2.5, 0.4, 0.1],
                     [0.0, 0.1, 0.4, 2.0, 0.3], [0.2, 0.0, 0.1, 0.3, 1.5]])
    rhs = np.array([1.0, -2.0, 0.5, 3.0, -1.0])
    print("cg_solution", np.linalg.solve(hmat, rhs).tolist())


if __name__ == "__main__":
    main()
