"""Views package.

Views render results for people and machines: text reports, JSON
lines, CSV tables and the training-curve figure.  They format what the
view-models return and compute nothing themselves.
"""
