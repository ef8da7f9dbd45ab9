"""Regression with reject option using kNN plug-in predictors."""
