import warnings

# numba's TBB-version notice is environment noise, not a test signal
warnings.filterwarnings("ignore", message=".*TBB.*")
