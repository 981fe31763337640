"""Walk through the tensor core: forward ops, the tape, and gradients.

Run:  python demos/01_tensor_autodiff.py
"""

import numpy as np

from sfinet import tensor as T
from sfinet.gradcheck import finite_diff_grad, max_rel_err
from sfinet.tensor import CompGraph, Tensor

rng = np.random.default_rng(0)

print("== a tiny expression and its tape ==")
a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
w = Tensor(rng.standard_normal((2, 2)))


def expression():
    return T.sum_all(T.hadamard(T.softmax(T.matmul(T.tanh(a), b), axis=-1), w))


loss = expression()
graph = CompGraph.from_output(loss)
print("ops executed, in order:")
for node in graph.nodes:
    print(f"  {node.op:10s} shape {node.shape}")

loss.backward()
print("\nanalytic dL/da:\n", a.grad)

print("\n== cross-checking against central finite differences ==")
numeric = finite_diff_grad(lambda: expression().item(), a.data)
print("worst relative error:", max_rel_err(a.grad, numeric))

print("\n== the documented mask broadcast ==")
features = Tensor(rng.standard_normal((2, 2, 3)), requires_grad=True)
mask = Tensor(np.array([[1.0, 0.0], [1.0, 1.0]]))
masked = T.hadamard(features, mask)
print("masked position (0,1) is zero across channels:", masked.data[0, 1])
T.sum_all(masked).backward()
print("gradient at the dropped position is zero:", features.grad[0, 1])

print("\n== determinism: repeated backward is bit-identical ==")
first = a.grad.copy()
a.zero_grad(); b.zero_grad()
expression().backward()
print("bitwise equal:", np.array_equal(first, a.grad))
