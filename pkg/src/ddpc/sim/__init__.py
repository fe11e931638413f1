"""Synthetic testbed: plant, battery, grid signals, weather, comfort and market."""
