"""This module contains all tests for the training algorithms of d4decoder."""
