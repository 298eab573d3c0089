import os

# deployments already saturate the box; keep BLAS single-threaded so the
# tiny batched linalg calls inside the simulator do not fight over cores
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
