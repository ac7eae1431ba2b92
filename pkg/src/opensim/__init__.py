"""Digital simulation of open quantum lattice models.

Modules
-------
linops      dense operator algebra, channels and channel distances
model       lattice models, coupling functions, vacuum memory kernels
envdisc     time-domain discretization and truncation of the bosonic environment
trotter     product formulas and staged Trotterization of open-system evolution
lindblad    Liouvillians, exact propagators and locally dilated Hamiltonians
stochastic  Gaussian circuit ensembles and Wiener-process unravelings
resources   gate, depth and ancilla counts for the simulation algorithms
cli         the ``sim`` batch entry point
"""

__version__ = "0.1.0"
