"""Mean field games with lateral Cauchy data: forward solver, Carleman checks and reconstruction."""

__version__ = "0.1.0"
