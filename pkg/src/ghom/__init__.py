from ghom.kernels import BACKEND
