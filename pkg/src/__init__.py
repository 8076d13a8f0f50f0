# scatterguard: on-body backscatter tag authentication simulator
__version__ = "1.0.0"
