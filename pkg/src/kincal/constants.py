"""Physical constants in the CGS-mol convention used throughout the package.

Concentrations are mol/cm^3, activation energies cal/mol, pressure dyn/cm^2.
"""

# Gas constant for Arrhenius exponents, cal/(mol K)
R_CAL = 1.9872036

# Gas constant in CGS energy units, erg/(mol K)
R_ERG = 8.31446261815324e7

# One standard atmosphere, dyn/cm^2
P_ATM = 1.01325e6

# Atomic masses, g/mol
ATOMIC_MASSES = {
    "H": 1.00794,
    "O": 15.9994,
    "N": 14.0067,
    "C": 12.0107,
    "Ar": 39.948,
    "He": 4.002602,
}
