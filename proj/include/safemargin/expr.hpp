#pragma once

#include <memory>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace safemargin {

// Scalar expression trees over named variables. Immutable after construction,
// so they can be shared freely across threads.

enum class UnaryOp { Neg, Sin, Cos, Tan, Exp, Log, Sqrt };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
public:
    enum class Kind { Constant, Variable, Unary, Binary };

    static ExprPtr constant(double value);
    static ExprPtr variable(std::string name);
    static ExprPtr unary(UnaryOp op, ExprPtr operand);
    static ExprPtr binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs);

    Kind kind() const { return kind_; }
    double value() const { return value_; }
    const std::string& name() const { return name_; }
    UnaryOp unary_op() const { return unary_op_; }
    BinaryOp binary_op() const { return binary_op_; }
    const ExprPtr& operand() const { return lhs_; }
    const ExprPtr& lhs() const { return lhs_; }
    const ExprPtr& rhs() const { return rhs_; }

    bool is_constant(double v) const {
        return kind_ == Kind::Constant && value_ == v;
    }

private:
    Expr() = default;

    Kind kind_ = Kind::Constant;
    double value_ = 0.0;
    std::string name_;
    UnaryOp unary_op_ = UnaryOp::Neg;
    BinaryOp binary_op_ = BinaryOp::Add;
    ExprPtr lhs_;
    ExprPtr rhs_;
};

struct SyntaxError : std::runtime_error {
    SyntaxError(std::size_t position, std::string expected);
    std::size_t position;   // 0-based character offset
    std::string expected;
};

struct UnknownVariable : std::runtime_error {
    UnknownVariable(std::string name, std::size_t position);
    std::string name;
    std::size_t position;
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Grammar: add/sub < mul/div < unary minus < pow (right-associative).
// Functions: sin, cos, tan, exp, log, sqrt. Variables must appear in `vars`.
ExprPtr parse(std::string_view text, std::span<const std::string> vars);

double eval(const Expr& e, const std::map<std::string, double>& env);

// Exact partial derivative with 0/1 constant folding. Takes the node by
// shared pointer because the result can reference subtrees of the input.
ExprPtr diff(const ExprPtr& e, std::string_view var);

// Fully parenthesized form; parse(to_string(e)) is structurally equal to e.
std::string to_string(const Expr& e);

bool structurally_equal(const Expr& a, const Expr& b);

void collect_variables(const Expr& e, std::set<std::string>& out);

// Postfix program evaluated against state/parameter slot arrays. This is the
// hot path for ODE right-hand sides; the tree form is kept for symbolic work.
class Tape {
public:
    static Tape compile(const Expr& e,
                        std::span<const std::string> state_names,
                        std::span<const std::string> param_names);

    double eval(const double* state, const double* params) const;

private:
    enum class Op : std::uint8_t {
        PushConst, PushState, PushParam,
        Neg, Sin, Cos, Tan, Exp, Log, Sqrt,
        Add, Sub, Mul, Div, Pow,
    };
    struct Instr {
        Op op;
        int slot = 0;
        double k = 0.0;
    };
    std::vector<Instr> code_;
    int max_depth_ = 0;
};

} // namespace safemargin
