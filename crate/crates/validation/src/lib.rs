//! Holds the `acceptance` test target, kept in its own package so that the
//! other suites of the workspace run before it.
