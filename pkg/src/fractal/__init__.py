"""Self-similar structures, harmonic structures and the built-in families.

Modules:
    - structure: words, cells and the vertex sets V_m
    - harmonic: boundary forms, renormalization, piecewise harmonic functions
    - zoo: Sierpinski gaskets, Hata's tree-like set and the interval
"""
