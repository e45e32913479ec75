#pragma once

#include <stdexcept>
#include <string>

namespace ticketlab {

/// Invalid configuration: budgets, shapes requested by the user, unknown enum names.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data: dimension mismatches, unparsable files.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or parameters. `epoch` and `batch` locate the failure.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, int epoch, long batch, double loss)
        : std::runtime_error(what), epoch_(epoch), batch_(batch), loss_(loss) {}

    int epoch() const noexcept { return epoch_; }
    long batch() const noexcept { return batch_; }
    double loss() const noexcept { return loss_; }

private:
    int epoch_;
    long batch_;
    double loss_;
};

}  // namespace ticketlab
