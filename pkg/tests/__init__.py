#!/usr/bin/env python3
"""Ober test suite."""
