"""Complex-step differentiation on matrix Lie groups."""
