"""Test suite for the glare-resilient costmap pipeline."""
