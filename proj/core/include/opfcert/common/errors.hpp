#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace opfcert {

/// Root of all library exceptions.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad input data or configuration. The CLI maps this family to exit code 1.
class InputError : public Error {
  public:
    using Error::Error;
};

/// A numerical procedure failed. The CLI maps this family to exit code 2.
class NumericalError : public Error {
  public:
    using Error::Error;
};

class ParseError : public InputError {
  public:
    ParseError(std::size_t line, const std::string& reason)
        : InputError("line " + std::to_string(line) + ": " + reason), line_(line), reason_(reason) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

  private:
    std::size_t line_;
    std::string reason_;
};

class ValidationError : public InputError {
  public:
    using InputError::InputError;
};

class FormatError : public InputError {
  public:
    using InputError::InputError;
};

class HeadMismatch : public InputError {
  public:
    using InputError::InputError;
};

class SingularBranch : public NumericalError {
  public:
    explicit SingularBranch(std::size_t branch)
        : NumericalError("branch " + std::to_string(branch) + " has zero series impedance"),
          branch_(branch) {}

    std::size_t branch() const noexcept { return branch_; }

  private:
    std::size_t branch_;
};

/// Newton power flow did not reach the mismatch tolerance.
class NonConvergence : public NumericalError {
  public:
    NonConvergence(int iterations, double final_mismatch)
        : NumericalError("power flow did not converge after " + std::to_string(iterations) +
                         " iterations (mismatch " + std::to_string(final_mismatch) + ")"),
          iterations_(iterations), final_mismatch_(final_mismatch) {}

    int iterations() const noexcept { return iterations_; }
    double final_mismatch() const noexcept { return final_mismatch_; }

  private:
    int iterations_;
    double final_mismatch_;
};

/// The OPF / restoration solver stopped without satisfying its optimality test.
class NoConvergence : public NumericalError {
  public:
    explicit NoConvergence(double best_residual)
        : NumericalError("optimization did not converge (best residual " +
                         std::to_string(best_residual) + ")"),
          best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

  private:
    double best_residual_;
};

class LabelingFailed : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

class Divergence : public NumericalError {
  public:
    explicit Divergence(int epoch)
        : NumericalError("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

  private:
    int epoch_;
};

}  // namespace opfcert
