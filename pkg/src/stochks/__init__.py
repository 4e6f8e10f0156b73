"""Numerical laboratory for the 2-D stochastic Keller-Segel equation with
conservative transport noise.

Submodules
----------
covariance  noise synthesis (divergence-free Fourier modes), C_sigma estimation
grid        periodic spectral fields, chemical solver, dealiasing, grid dumps
dynamics    Ito Euler-Maruyama and Stratonovich Heun steppers, blow-up detection
moments     mass / centre / half-variance functionals and identity residuals
criteria    closed-form blow-up thresholds and times, Gronwall envelope
particles   interacting particle oracle with shared common noise
ensemble    Monte-Carlo driver, configuration files, reports
"""

__version__ = "0.1.0"
