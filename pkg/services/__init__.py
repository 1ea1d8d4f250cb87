"""Services package.

Services wrap the file system: dataset manifests and feature files,
checkpoints, run directories and the synthetic corpus generator.
View-models depend on these interfaces rather than on file layouts.
"""
