"""This module contains all tests for the prediction models of d4decoder."""
