"""Tests for the kernel multigrid solver."""
