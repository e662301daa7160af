"""
Estimating the trace of a matrix read from a Matrix Market file
================================================================

Any square real matrix stored in Matrix Market ``array`` or ``coordinate``
format can be loaded as an operator.  Symmetric files store only the lower
triangle and are expanded on load.
"""

import tempfile
from pathlib import Path

import numpy as np

from frozentrace import exact, hutchinson, hutchpp, load_matrix_market, write_matrix_market

rng = np.random.default_rng(0)
g = rng.standard_normal((300, 40))
a = g @ g.T / 40 + 0.01 * np.eye(300)  # PSD, numerically rank about 40

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "gram.mtx"
    write_matrix_market(path, a, symmetric=True)
    print(path.read_text().splitlines()[0])
    op = load_matrix_market(path)

print(f"dimension {op.dim}, symmetric {op.is_symmetric}")
print(f"exact      {exact(op).value:.4f}")
for m in (30, 60, 120):
    h = hutchinson(op, m, seed=1)
    pp = hutchpp(op, m, seed=1)
    print(f"m={m:>3}  hutchinson {h.value:9.4f}   hutch++ {pp.value:9.4f}  (rank of sketch basis {pp.rank})")
