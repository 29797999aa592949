"""Body-induced RF attenuation on dense link graphs: diffraction models, resolvability bounds and a graph counting network."""

__version__ = "0.1.0"
