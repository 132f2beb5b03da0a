#include "safemargin/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace safemargin {

ExprPtr Expr::constant(double value) {
    auto e = std::shared_ptr<Expr>(new Expr());
    e->kind_ = Kind::Constant;
    e->value_ = value;
    return e;
}

ExprPtr Expr::variable(std::string name) {
    auto e = std::shared_ptr<Expr>(new Expr());
    e->kind_ = Kind::Variable;
    e->name_ = std::move(name);
    return e;
}

ExprPtr Expr::unary(UnaryOp op, ExprPtr operand) {
    // fold negated literals so "-2.5" and constant(-2.5) are one tree shape
    if (op == UnaryOp::Neg && operand->kind() == Kind::Constant)
        return constant(-operand->value());
    auto e = std::shared_ptr<Expr>(new Expr());
    e->kind_ = Kind::Unary;
    e->unary_op_ = op;
    e->lhs_ = std::move(operand);
    return e;
}

ExprPtr Expr::binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
    auto e = std::shared_ptr<Expr>(new Expr());
    e->kind_ = Kind::Binary;
    e->binary_op_ = op;
    e->lhs_ = std::move(lhs);
    e->rhs_ = std::move(rhs);
    return e;
}

SyntaxError::SyntaxError(std::size_t pos, std::string exp)
    : std::runtime_error("syntax error at offset " + std::to_string(pos) +
                         ": expected " + exp),
      position(pos),
      expected(std::move(exp)) {}

UnknownVariable::UnknownVariable(std::string n, std::size_t pos)
    : std::runtime_error("unknown variable '" + n + "' at offset " +
                         std::to_string(pos)),
      name(std::move(n)),
      position(pos) {}

namespace {

const char* unary_name(UnaryOp op) {
    switch (op) {
    case UnaryOp::Neg:  return "-";
    case UnaryOp::Sin:  return "sin";
    case UnaryOp::Cos:  return "cos";
    case UnaryOp::Tan:  return "tan";
    case UnaryOp::Exp:  return "exp";
    case UnaryOp::Log:  return "log";
    case UnaryOp::Sqrt: return "sqrt";
    }
    return "?";
}

class Parser {
public:
    Parser(std::string_view text, std::span<const std::string> vars)
        : text_(text), vars_(vars) {}

    ExprPtr run() {
        if (text_.empty())
            throw SyntaxError(0, "non-empty expression");
        ExprPtr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size())
            throw SyntaxError(pos_, "end of input or operator");
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    ExprPtr parse_sum() {
        ExprPtr e = parse_term();
        for (;;) {
            if (consume('+'))
                e = Expr::binary(BinaryOp::Add, e, parse_term());
            else if (consume('-'))
                e = Expr::binary(BinaryOp::Sub, e, parse_term());
            else
                return e;
        }
    }

    ExprPtr parse_term() {
        ExprPtr e = parse_unary();
        for (;;) {
            if (consume('*'))
                e = Expr::binary(BinaryOp::Mul, e, parse_unary());
            else if (consume('/'))
                e = Expr::binary(BinaryOp::Div, e, parse_unary());
            else
                return e;
        }
    }

    // Unary minus binds tighter than '*' but looser than '^', so "-x^2"
    // is -(x^2) and "2^-3" parses with a negated exponent.
    ExprPtr parse_unary() {
        if (consume('-'))
            return Expr::unary(UnaryOp::Neg, parse_unary());
        return parse_power();
    }

    ExprPtr parse_power() {
        ExprPtr base = parse_atom();
        if (consume('^'))
            return Expr::binary(BinaryOp::Pow, base, parse_unary());
        return base;
    }

    ExprPtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size())
            throw SyntaxError(pos_, "number, variable, function or '('");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = parse_sum();
            if (!consume(')'))
                throw SyntaxError(pos_, "')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            return parse_name();
        throw SyntaxError(pos_, "number, variable, function or '('");
    }

    ExprPtr parse_number() {
        const char* begin = text_.data() + pos_;
        char* end = nullptr;
        errno = 0;
        double v = std::strtod(begin, &end);
        if (end == begin || errno == ERANGE)
            throw SyntaxError(pos_, "number");
        pos_ += static_cast<std::size_t>(end - begin);
        return Expr::constant(v);
    }

    ExprPtr parse_name() {
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string name(text_.substr(start, pos_ - start));

        static const std::pair<const char*, UnaryOp> kFunctions[] = {
            {"sin", UnaryOp::Sin}, {"cos", UnaryOp::Cos}, {"tan", UnaryOp::Tan},
            {"exp", UnaryOp::Exp}, {"log", UnaryOp::Log}, {"sqrt", UnaryOp::Sqrt},
        };
        for (const auto& [fname, op] : kFunctions) {
            if (name == fname) {
                if (!consume('('))
                    throw SyntaxError(pos_, "'(' after function name");
                ExprPtr arg = parse_sum();
                if (!consume(')'))
                    throw SyntaxError(pos_, "')'");
                return Expr::unary(op, arg);
            }
        }
        if (std::find(vars_.begin(), vars_.end(), name) == vars_.end())
            throw UnknownVariable(name, start);
        return Expr::variable(std::move(name));
    }

    std::string_view text_;
    std::span<const std::string> vars_;
    std::size_t pos_ = 0;
};

double apply_unary(UnaryOp op, double a) {
    switch (op) {
    case UnaryOp::Neg:  return -a;
    case UnaryOp::Sin:  return std::sin(a);
    case UnaryOp::Cos:  return std::cos(a);
    case UnaryOp::Tan:  return std::tan(a);
    case UnaryOp::Exp:  return std::exp(a);
    case UnaryOp::Log:
        if (a <= 0.0)
            throw DomainError("log of non-positive value");
        return std::log(a);
    case UnaryOp::Sqrt:
        if (a < 0.0)
            throw DomainError("sqrt of negative value");
        return std::sqrt(a);
    }
    return 0.0;
}

double apply_binary(BinaryOp op, double a, double b) {
    switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div:
        if (b == 0.0)
            throw DomainError("division by zero");
        return a / b;
    case BinaryOp::Pow: {
        double r = std::pow(a, b);
        if (std::isnan(r) && !std::isnan(a) && !std::isnan(b))
            throw DomainError("pow outside real domain");
        return r;
    }
    }
    return 0.0;
}

bool is_const(const ExprPtr& e, double v) { return e->is_constant(v); }

ExprPtr make_add(ExprPtr a, ExprPtr b) {
    if (is_const(a, 0.0)) return b;
    if (is_const(b, 0.0)) return a;
    if (a->kind() == Expr::Kind::Constant && b->kind() == Expr::Kind::Constant)
        return Expr::constant(a->value() + b->value());
    return Expr::binary(BinaryOp::Add, std::move(a), std::move(b));
}

ExprPtr make_sub(ExprPtr a, ExprPtr b) {
    if (is_const(b, 0.0)) return a;
    if (a->kind() == Expr::Kind::Constant && b->kind() == Expr::Kind::Constant)
        return Expr::constant(a->value() - b->value());
    if (is_const(a, 0.0)) return Expr::unary(UnaryOp::Neg, std::move(b));
    return Expr::binary(BinaryOp::Sub, std::move(a), std::move(b));
}

ExprPtr make_mul(ExprPtr a, ExprPtr b) {
    if (is_const(a, 0.0) || is_const(b, 0.0)) return Expr::constant(0.0);
    if (is_const(a, 1.0)) return b;
    if (is_const(b, 1.0)) return a;
    if (a->kind() == Expr::Kind::Constant && b->kind() == Expr::Kind::Constant)
        return Expr::constant(a->value() * b->value());
    return Expr::binary(BinaryOp::Mul, std::move(a), std::move(b));
}

ExprPtr make_div(ExprPtr a, ExprPtr b) {
    if (is_const(a, 0.0)) return Expr::constant(0.0);
    if (is_const(b, 1.0)) return a;
    return Expr::binary(BinaryOp::Div, std::move(a), std::move(b));
}

ExprPtr diff_impl(const ExprPtr& e, std::string_view var) {
    switch (e->kind()) {
    case Expr::Kind::Constant:
        return Expr::constant(0.0);
    case Expr::Kind::Variable:
        return Expr::constant(e->name() == var ? 1.0 : 0.0);
    case Expr::Kind::Unary: {
        ExprPtr u = e->operand();
        ExprPtr du = diff_impl(u, var);
        switch (e->unary_op()) {
        case UnaryOp::Neg:
            if (is_const(du, 0.0)) return du;
            return Expr::unary(UnaryOp::Neg, du);
        case UnaryOp::Sin:
            return make_mul(Expr::unary(UnaryOp::Cos, u), du);
        case UnaryOp::Cos:
            return make_mul(Expr::unary(UnaryOp::Neg, Expr::unary(UnaryOp::Sin, u)), du);
        case UnaryOp::Tan: {
            ExprPtr sec2 = make_div(Expr::constant(1.0),
                                    Expr::binary(BinaryOp::Pow,
                                                 Expr::unary(UnaryOp::Cos, u),
                                                 Expr::constant(2.0)));
            return make_mul(sec2, du);
        }
        case UnaryOp::Exp:
            return make_mul(Expr::unary(UnaryOp::Exp, u), du);
        case UnaryOp::Log:
            return make_div(du, u);
        case UnaryOp::Sqrt:
            return make_div(du, make_mul(Expr::constant(2.0),
                                         Expr::unary(UnaryOp::Sqrt, u)));
        }
        break;
    }
    case Expr::Kind::Binary: {
        ExprPtr a = e->lhs(), b = e->rhs();
        ExprPtr da = diff_impl(a, var), db = diff_impl(b, var);
        switch (e->binary_op()) {
        case BinaryOp::Add: return make_add(da, db);
        case BinaryOp::Sub: return make_sub(da, db);
        case BinaryOp::Mul: return make_add(make_mul(da, b), make_mul(a, db));
        case BinaryOp::Div:
            // (da*b - a*db) / b^2
            return make_div(make_sub(make_mul(da, b), make_mul(a, db)),
                            Expr::binary(BinaryOp::Pow, b, Expr::constant(2.0)));
        case BinaryOp::Pow: {
            if (b->kind() == Expr::Kind::Constant) {
                // c * u^(c-1) * du, avoiding log(u)
                double c = b->value();
                if (c == 0.0) return Expr::constant(0.0);
                ExprPtr power = (c == 1.0)
                    ? Expr::constant(1.0)
                    : Expr::binary(BinaryOp::Pow, a, Expr::constant(c - 1.0));
                return make_mul(make_mul(Expr::constant(c), power), da);
            }
            if (is_const(da, 0.0)) {
                // a^b * log(a) * db
                return make_mul(make_mul(e, Expr::unary(UnaryOp::Log, a)), db);
            }
            // a^b * (db*log(a) + b*da/a)
            ExprPtr inner = make_add(make_mul(db, Expr::unary(UnaryOp::Log, a)),
                                     make_div(make_mul(b, da), a));
            return make_mul(e, inner);
        }
        }
        break;
    }
    }
    return Expr::constant(0.0);
}

} // namespace

ExprPtr parse(std::string_view text, std::span<const std::string> vars) {
    return Parser(text, vars).run();
}

double eval(const Expr& e, const std::map<std::string, double>& env) {
    switch (e.kind()) {
    case Expr::Kind::Constant:
        return e.value();
    case Expr::Kind::Variable: {
        auto it = env.find(e.name());
        if (it == env.end())
            throw DomainError("unbound variable '" + e.name() + "'");
        return it->second;
    }
    case Expr::Kind::Unary:
        return apply_unary(e.unary_op(), eval(*e.operand(), env));
    case Expr::Kind::Binary:
        return apply_binary(e.binary_op(), eval(*e.lhs(), env), eval(*e.rhs(), env));
    }
    return 0.0;
}

ExprPtr diff(const ExprPtr& e, std::string_view var) {
    return diff_impl(e, var);
}

std::string to_string(const Expr& e) {
    std::ostringstream os;
    os.precision(17);
    switch (e.kind()) {
    case Expr::Kind::Constant:
        os << e.value();
        break;
    case Expr::Kind::Variable:
        os << e.name();
        break;
    case Expr::Kind::Unary:
        if (e.unary_op() == UnaryOp::Neg)
            os << "(-" << to_string(*e.operand()) << ")";
        else
            os << unary_name(e.unary_op()) << "(" << to_string(*e.operand()) << ")";
        break;
    case Expr::Kind::Binary: {
        const char* sym = "?";
        switch (e.binary_op()) {
        case BinaryOp::Add: sym = "+"; break;
        case BinaryOp::Sub: sym = "-"; break;
        case BinaryOp::Mul: sym = "*"; break;
        case BinaryOp::Div: sym = "/"; break;
        case BinaryOp::Pow: sym = "^"; break;
        }
        os << "(" << to_string(*e.lhs()) << sym << to_string(*e.rhs()) << ")";
        break;
    }
    }
    return os.str();
}

bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
    case Expr::Kind::Constant:
        return a.value() == b.value();
    case Expr::Kind::Variable:
        return a.name() == b.name();
    case Expr::Kind::Unary:
        return a.unary_op() == b.unary_op() &&
               structurally_equal(*a.operand(), *b.operand());
    case Expr::Kind::Binary:
        return a.binary_op() == b.binary_op() &&
               structurally_equal(*a.lhs(), *b.lhs()) &&
               structurally_equal(*a.rhs(), *b.rhs());
    }
    return false;
}

void collect_variables(const Expr& e, std::set<std::string>& out) {
    switch (e.kind()) {
    case Expr::Kind::Constant:
        return;
    case Expr::Kind::Variable:
        out.insert(e.name());
        return;
    case Expr::Kind::Unary:
        collect_variables(*e.operand(), out);
        return;
    case Expr::Kind::Binary:
        collect_variables(*e.lhs(), out);
        collect_variables(*e.rhs(), out);
        return;
    }
}

Tape Tape::compile(const Expr& e,
                   std::span<const std::string> state_names,
                   std::span<const std::string> param_names) {
    Tape tape;
    struct Emitter {
        Tape& t;
        std::span<const std::string> states;
        std::span<const std::string> params;

        void emit(const Expr& n) {
            switch (n.kind()) {
            case Expr::Kind::Constant:
                t.code_.push_back({Op::PushConst, 0, n.value()});
                return;
            case Expr::Kind::Variable: {
                for (std::size_t i = 0; i < states.size(); ++i)
                    if (states[i] == n.name()) {
                        t.code_.push_back({Op::PushState, static_cast<int>(i), 0.0});
                        return;
                    }
                for (std::size_t i = 0; i < params.size(); ++i)
                    if (params[i] == n.name()) {
                        t.code_.push_back({Op::PushParam, static_cast<int>(i), 0.0});
                        return;
                    }
                throw DomainError("tape: variable '" + n.name() +
                                  "' is neither a state nor a parameter");
            }
            case Expr::Kind::Unary: {
                emit(*n.operand());
                Op op = Op::Neg;
                switch (n.unary_op()) {
                case UnaryOp::Neg:  op = Op::Neg;  break;
                case UnaryOp::Sin:  op = Op::Sin;  break;
                case UnaryOp::Cos:  op = Op::Cos;  break;
                case UnaryOp::Tan:  op = Op::Tan;  break;
                case UnaryOp::Exp:  op = Op::Exp;  break;
                case UnaryOp::Log:  op = Op::Log;  break;
                case UnaryOp::Sqrt: op = Op::Sqrt; break;
                }
                t.code_.push_back({op, 0, 0.0});
                return;
            }
            case Expr::Kind::Binary: {
                emit(*n.lhs());
                emit(*n.rhs());
                Op op = Op::Add;
                switch (n.binary_op()) {
                case BinaryOp::Add: op = Op::Add; break;
                case BinaryOp::Sub: op = Op::Sub; break;
                case BinaryOp::Mul: op = Op::Mul; break;
                case BinaryOp::Div: op = Op::Div; break;
                case BinaryOp::Pow: op = Op::Pow; break;
                }
                t.code_.push_back({op, 0, 0.0});
                return;
            }
            }
        }
    };
    Emitter em{tape, state_names, param_names};
    em.emit(e);

    int depth = 0;
    int max_depth = 0;
    for (const Instr& in : tape.code_) {
        switch (in.op) {
        case Op::PushConst:
        case Op::PushState:
        case Op::PushParam:
            ++depth;
            break;
        case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: case Op::Pow:
            --depth;
            break;
        default:
            break;
        }
        max_depth = std::max(max_depth, depth);
    }
    if (max_depth > 64)
        throw std::runtime_error("expression too deep to compile");
    tape.max_depth_ = max_depth;
    return tape;
}

double Tape::eval(const double* state, const double* params) const {
    double stack[64];
    int top = -1;
    for (const Instr& in : code_) {
        switch (in.op) {
        case Op::PushConst: stack[++top] = in.k; break;
        case Op::PushState: stack[++top] = state[in.slot]; break;
        case Op::PushParam: stack[++top] = params[in.slot]; break;
        case Op::Neg:  stack[top] = -stack[top]; break;
        case Op::Sin:  stack[top] = std::sin(stack[top]); break;
        case Op::Cos:  stack[top] = std::cos(stack[top]); break;
        case Op::Tan:  stack[top] = std::tan(stack[top]); break;
        case Op::Exp:  stack[top] = std::exp(stack[top]); break;
        case Op::Log:
            if (stack[top] <= 0.0) throw DomainError("log of non-positive value");
            stack[top] = std::log(stack[top]);
            break;
        case Op::Sqrt:
            if (stack[top] < 0.0) throw DomainError("sqrt of negative value");
            stack[top] = std::sqrt(stack[top]);
            break;
        case Op::Add: stack[top - 1] += stack[top]; --top; break;
        case Op::Sub: stack[top - 1] -= stack[top]; --top; break;
        case Op::Mul: stack[top - 1] *= stack[top]; --top; break;
        case Op::Div:
            if (stack[top] == 0.0) throw DomainError("division by zero");
            stack[top - 1] /= stack[top];
            --top;
            break;
        case Op::Pow: {
            double r = std::pow(stack[top - 1], stack[top]);
            if (std::isnan(r) && !std::isnan(stack[top - 1]) && !std::isnan(stack[top]))
                throw DomainError("pow outside real domain");
            stack[top - 1] = r;
            --top;
            break;
        }
        }
    }
    return stack[0];
}

} // namespace safemargin
