"""Transport, entanglement and bound checks on a tiny shift."""
import numpy as np

from entangle_ot import bounds as B
from entangle_ot import entangle as E
from entangle_ot.measures import EmpiricalJoint, euclidean_loss
from entangle_ot.transport import pairwise_euclidean, solve_exact

# two points against two points on a line
c = pairwise_euclidean([[0.0], [1.0]], [[1.0], [2.0]])
cp = solve_exact([0.5, 0.5], [0.5, 0.5], c)
print("W1 =", cp.objective, "duality gap =", cp.duality_gap())

# same inputs, flipped labels: the outputs match but the labels do not
rng = np.random.default_rng(0)
x = rng.normal(size=(8, 2))
p = EmpiricalJoint(x, (x[:, 0] > 0).astype(int))
q = EmpiricalJoint(x + [0.3, 0.0], (x[:, 0] <= 0).astype(int))


def f(v):
    z = np.stack([-v[:, 0], v[:, 0]], axis=1) * 2
    e = np.exp(z - z.max(1, keepdims=True))
    return e / e.sum(1, keepdims=True)


loss = euclidean_loss()
rep = E.oracle_upper_bound(p, q, f, loss)
for k, v in rep.as_dict().items():
    print(f"{k:>24}: {v}")

print(B.reports_to_csv(B.certify_all(p, q, f, loss)))
