#ifndef NFA_ERROR_HPP
#define NFA_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nfa {

// Caller broke a documented precondition (shape, range, configuration).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Mathematical domain error, e.g. ln of a non-positive value.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite value produced during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by a flow when one of its blocks overflows; carries the block index.
class FlowNumericError : public NumericError {
 public:
  FlowNumericError(std::size_t block, const std::string& what)
      : NumericError("flow block " + std::to_string(block) + ": " + what), block_(block) {}
  std::size_t block() const noexcept { return block_; }

 private:
  std::size_t block_;
};

// Oracle query attempted after the budget was spent.
class BudgetExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary or text input; the message names the offending offset or field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace nfa

#endif  // NFA_ERROR_HPP
