"""Fast leave-one-out and generalized cross-validation for Fourier-type Tikhonov problems."""
