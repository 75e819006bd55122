"""This module contains all tests for the dataset generators of d4decoder."""
