#pragma once

#include <stdexcept>
#include <string>

namespace gsyn {

/// File missing, unreadable, or malformed on disk.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss) or was fed unusable data.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gsyn
