"""Maximum-likelihood identification of nonlinear state-space models."""
