"""beam-bnf: нормальная форма Биркгофа и спектральный симулятор для уравнения балки."""

__version__ = "0.1.0"

__all__ = ["__version__"]
