use super::{add, div, mul, neg, pow, sub, ActionId, Expr};

pub(super) fn derivative(e: &Expr, v: ActionId) -> Expr {
    if !e.depends_on(v) {
        return Expr::Const(0.0);
    }
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(id) => Expr::Const(if *id == v { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(derivative(a, v)),
        Expr::Exp(a) => mul(e.clone(), derivative(a, v)),
        Expr::Log(a) => div(derivative(a, v), (**a).clone()),
        Expr::Add(a, b) => add(derivative(a, v), derivative(b, v)),
        Expr::Sub(a, b) => sub(derivative(a, v), derivative(b, v)),
        Expr::Mul(a, b) => add(
            mul(derivative(a, v), (**b).clone()),
            mul((**a).clone(), derivative(b, v)),
        ),
        Expr::Div(a, b) => {
            let da = derivative(a, v);
            let db = derivative(b, v);
            if db.is_zero() {
                div(da, (**b).clone())
            } else {
                div(
                    sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    pow((**b).clone(), 2.0),
                )
            }
        }
        Expr::Pow(a, n) => mul(mul(Expr::Const(*n), pow((**a).clone(), n - 1.0)), derivative(a, v)),
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, ActionId};

    fn d(text: &str, var: &str) -> String {
        let v: ActionId = var.parse().unwrap();
        parse(text).unwrap().differentiate(v).to_string()
    }

    #[test]
    fn square_of_difference() {
        assert_eq!(d("(x1_1 - 0.5*x3_1)^2", "x1_1"), "2*(x1_1 - 0.5*x3_1)");
    }

    #[test]
    fn exp_term_survives_alone() {
        assert_eq!(d("exp(x3_1) + x3_6^2", "x3_1"), "exp(x3_1)");
    }

    #[test]
    fn absent_variable_gives_zero() {
        assert_eq!(d("x2_1^3", "x2_2"), "0");
    }

    #[test]
    fn quotient_and_log_rules() {
        assert_eq!(d("log(x1_1 + 1)", "x1_1"), "1/(x1_1 + 1)");
        assert_eq!(d("10/(20 - x1_1)", "x1_1"), "10/(20 - x1_1)^2");
        assert_eq!(d("x1_1/x1_2", "x1_1"), "1/x1_2");
    }

    #[test]
    fn product_rule() {
        assert_eq!(d("x2_1*x3_2", "x2_1"), "x3_2");
        assert_eq!(d("x3_1*x2_1^2", "x3_1"), "x2_1^2");
        assert_eq!(d("x3_1*x2_1^2", "x2_1"), "x3_1*(2*x2_1)");
    }
}
