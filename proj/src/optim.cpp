#include "tonelab/optim.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

namespace tonelab {

namespace {

struct GslGuard {
    GslGuard() { old = gsl_set_error_handler_off(); }
    ~GslGuard() { gsl_set_error_handler(old); }
    gsl_error_handler_t* old;
};

Vec from_gsl(const gsl_vector* v)
{
    Vec r(static_cast<int>(v->size));
    for (size_t i = 0; i < v->size; ++i) r(static_cast<int>(i)) = gsl_vector_get(v, i);
    return r;
}

double nm_f(const gsl_vector* v, void* p)
{
    auto& f = *static_cast<const std::function<double(const Vec&)>*>(p);
    const double r = f(from_gsl(v));
    return std::isfinite(r) ? r : 1e300;
}

using FG = std::function<double(const Vec&, Vec&)>;

double bf_f(const gsl_vector* v, void* p)
{
    Vec g;
    return (*static_cast<const FG*>(p))(from_gsl(v), g);
}

void bf_df(const gsl_vector* v, void* p, gsl_vector* df)
{
    Vec g;
    (*static_cast<const FG*>(p))(from_gsl(v), g);
    for (int i = 0; i < g.size(); ++i) gsl_vector_set(df, static_cast<size_t>(i), g(i));
}

void bf_fdf(const gsl_vector* v, void* p, double* f, gsl_vector* df)
{
    Vec g;
    *f = (*static_cast<const FG*>(p))(from_gsl(v), g);
    for (int i = 0; i < g.size(); ++i) gsl_vector_set(df, static_cast<size_t>(i), g(i));
}

}  // namespace

MinResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0, double step, int max_iter,
                      double size_tol)
{
    GslGuard guard;
    const size_t n = static_cast<size_t>(x0.size());
    MinResult r{x0, f(x0), 0, false};
    if (n == 0) return r;
    gsl_vector* x = gsl_vector_alloc(n);
    gsl_vector* ss = gsl_vector_alloc(n);
    for (size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0(static_cast<int>(i)));
    gsl_vector_set_all(ss, step);
    gsl_multimin_function fn{&nm_f, n, const_cast<std::function<double(const Vec&)>*>(&f)};
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &fn, x, ss);
    for (int it = 0; it < max_iter; ++it) {
        r.iterations = it + 1;
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), size_tol) == GSL_SUCCESS) {
            r.converged = true;
            break;
        }
    }
    const Vec xb = from_gsl(s->x);
    if (s->fval < r.f) {
        r.x = xb;
        r.f = s->fval;
    }
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(x);
    gsl_vector_free(ss);
    return r;
}

MinResult bfgs(const std::function<double(const Vec&, Vec&)>& fg, const Vec& x0, int max_iter, double grad_tol,
               double first_step)
{
    GslGuard guard;
    const size_t n = static_cast<size_t>(x0.size());
    Vec g0;
    MinResult r{x0, fg(x0, g0), 0, false};
    gsl_vector* x = gsl_vector_alloc(n);
    for (size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0(static_cast<int>(i)));
    gsl_multimin_function_fdf fn{&bf_f, &bf_df, &bf_fdf, n, const_cast<FG*>(&fg)};
    gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
    gsl_multimin_fdfminimizer_set(s, &fn, x, first_step, 0.1);
    for (int it = 0; it < max_iter; ++it) {
        r.iterations = it + 1;
        if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
        if (gsl_multimin_test_gradient(s->gradient, grad_tol) == GSL_SUCCESS) {
            r.converged = true;
            break;
        }
    }
    if (s->f <= r.f) {
        r.x = from_gsl(s->x);
        r.f = s->f;
    }
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(x);
    return r;
}

}  // namespace tonelab
