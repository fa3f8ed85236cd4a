import os
import sys

# thread count for the BLAS/OpenMP pools has to be fixed before numpy loads
_threads = os.environ.get("ARONSSON_LAB_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = _threads

from .cli import main  # noqa: E402

sys.exit(main())
