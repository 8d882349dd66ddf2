"""Dense statevector oracle for the measurement-free quantum fragment.

Kets are computational basis vectors, sums and scalars act literally,
products are Kronecker products, casts are erased, and zero is the null
vector.  This is the independent cross-check for the rewriter and the
denotational evaluator: anything the fragment can express is a 2^n
amplitude array here.
"""

from __future__ import annotations

import numpy as np

from .syntax import (
    CastL,
    CastR,
    Ket,
    LamsError,
    Prod,
    Scale,
    Sum,
    TQ,
    Term,
    Type,
    Zero,
    bn_arity,
    split_s,
)


class OutOfFragment(LamsError):
    """Term is outside the kets/sums/scalars/products/casts fragment."""


def statevector_eval(t: Term) -> np.ndarray:
    """Dense amplitudes of a fragment term; the array length is 2^n."""
    match t:
        case Ket(b):
            v = np.zeros(2, dtype=complex)
            v[b] = 1.0
            return v
        case Zero(annot):
            n = _annot_qubits(annot)
            return np.zeros(2 ** n, dtype=complex)
        case Scale(c, body):
            return c * statevector_eval(body)
        case Sum(ts):
            vecs = [statevector_eval(x) for x in ts]
            dims = {v.shape[0] for v in vecs}
            if len(dims) != 1:
                raise OutOfFragment(f"sum of mismatched dimensions {dims}")
            return np.sum(vecs, axis=0)
        case Prod(l, r):
            return np.kron(statevector_eval(l), statevector_eval(r))
        case CastR(body) | CastL(body):
            return statevector_eval(body)
        case _:
            raise OutOfFragment(f"not in the quantum fragment: {t!r}")


def _annot_qubits(annot: Type) -> int:
    _, core = split_s(annot)
    n = bn_arity(core.q) if isinstance(core, TQ) else None
    if n is None:
        raise OutOfFragment(f"zero annotation outside B^n lifts: {annot!r}")
    return n


def qubit_count(v: np.ndarray) -> int:
    n = int(np.log2(v.shape[0]))
    if 2 ** n != v.shape[0]:
        raise LamsError(f"array length {v.shape[0]} is not a power of two")
    return n


def born_probabilities(v: np.ndarray, j: int) -> dict[int, float]:
    """Measurement probabilities for the first j qubits of an (unnormalized)
    statevector, computed via the Born rule."""
    n = qubit_count(v)
    if not 1 <= j <= n:
        raise LamsError(f"cannot measure {j} of {n} qubits")
    total = float(np.vdot(v, v).real)
    if total <= 0:
        raise LamsError("zero-norm statevector")
    block = 2 ** (n - j)
    out: dict[int, float] = {}
    for k in range(2 ** j):
        p = float(np.vdot(v[k * block : (k + 1) * block], v[k * block : (k + 1) * block]).real)
        if p > 0:
            out[k] = p / total
    return out


def post_measurement_state(v: np.ndarray, j: int, k: int) -> np.ndarray:
    """Renormalized suffix state after observing outcome k on the first j qubits."""
    n = qubit_count(v)
    block = 2 ** (n - j)
    suffix = v[k * block : (k + 1) * block]
    norm = np.linalg.norm(suffix)
    if norm == 0:
        raise LamsError(f"outcome {k} has probability zero")
    return suffix / norm


def amplitudes_close(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    if a.shape != b.shape:
        return False
    return bool(np.max(np.abs(a - b)) <= tol)


def total_variation(p: dict[int, float], q: dict[int, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
