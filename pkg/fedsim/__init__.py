"""fedsim: simulador determinista de aprendizaje federado robusto a partes bizantinas."""

__version__ = "0.1.0"
