"""Spectral construction of fractional diffusion limits for kinetic Fokker-Planck operators."""
