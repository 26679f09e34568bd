//! Holds the `acceptance` test target, which checks the library and the
//! benchmark pipeline against simulated trials with known effects.
