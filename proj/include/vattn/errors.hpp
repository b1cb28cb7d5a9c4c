#pragma once

#include <stdexcept>
#include <string>

namespace vattn {

// Thrown when a computation leaves the numerical domain (non-finite loss,
// non-finite objective inside grad_check, ...). Maps to CLI exit code 4.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when input data cannot support the requested operation (e.g. all
// clustering points identical). Maps to CLI exit code 3.
struct DegenerateDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an object is used before a required preparation step (e.g.
// InVA loss on samples without CL labels).
struct InvalidStateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace vattn
