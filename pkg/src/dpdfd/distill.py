"""Training procedures built on the sanitized-gradient mechanism.

Three loops share the same skeleton:

* `dpdfd_train`        -- one teacher, synthetic data from a generator;
                          one sanitized gradient per batch, broadcast to
                          every example's target.
* `multi_model_train`  -- several teachers; gradients are bounded per
                          teacher and averaged per example with one
                          noise draw each (divisor = teacher count).
* `direct_dp_train`    -- labeled private data, no generator.

The sanitized vector is the only quantity derived from a teacher (or
from private labels) that ever reaches a parameter update; losses on
teacher outputs are computed solely to produce the per-example
gradients that enter the sanitizer, plus reporting.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .accountant import PrivacyLedger, max_iterations
from .backend import log_softmax_rows, row_norms, softmax_rows
from .dpmech import MechanismConfig, sanitize_batch
from .errors import (
    DimensionError,
    InfeasibleBudgetError,
    NumericalError,
    ValidationError,
)
from .nnkit import (
    accuracy,
    backward,
    forward,
    sgd_step,
    softmax_cross_entropy,
)


@dataclass(frozen=True)
class DpConfig:
    """Everything one training run needs besides the models and data.

    gamma is the step applied to the student outputs when forming the
    private targets; gamma_s / gamma_g are the parameter learning rates.
    alpha and beta weight the generator's balance and activation terms.
    include_generator_ce and feature_norm_sign exist for the
    loss-composition ablation; the default sign -1 makes larger backbone
    activations lower the generator loss.
    """

    mechanism: MechanismConfig
    gamma: float = 0.05
    gamma_s: float = 0.05
    gamma_g: float = 0.05
    batch_size: int = 256
    iterations: int = 500
    delta: float = 1e-5
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 1.0
    temperature: float = 4.0
    epsilon_budget: float = None
    accounting: str = "paper"
    include_generator_ce: bool = True
    feature_norm_sign: float = -1.0
    noise_dim: int = 16

    def __post_init__(self):
        if self.gamma <= 0 or self.gamma_s <= 0 or self.gamma_g <= 0:
            raise ValidationError("all learning rates must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.iterations < 0:
            raise ValidationError("iterations must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be nonnegative")
        if self.tau < 0:
            raise ValidationError("tau must be nonnegative")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.feature_norm_sign not in (-1.0, 1.0):
            raise ValidationError("feature_norm_sign must be -1.0 or +1.0")
        if self.noise_dim < 1:
            raise ValidationError("noise_dim must be positive")


@dataclass(frozen=True)
class EnsembleSpec:
    """A bag of teachers distilled jointly; all must agree on both dims."""

    teachers: tuple

    def __post_init__(self):
        teachers = tuple(self.teachers)
        if not teachers:
            raise ValidationError("ensemble needs at least one teacher")
        out = teachers[0].output_dim
        inp = teachers[0].input_dim
        for t in teachers[1:]:
            if t.output_dim != out or t.input_dim != inp:
                raise DimensionError("all ensemble teachers must share dimensions")
        object.__setattr__(self, "teachers", teachers)


@dataclass
class IterationRecord:
    iteration: int
    loss_t: float
    loss_s: float
    loss_g: float
    accuracy: float
    epsilon_spent: float
    grad_norm_mean: float
    grad_norm_running_min: float
    mean_softmax_entropy: float


@dataclass
class TrainReport:
    """Per-iteration metrics plus the final checkpoints."""

    records: list
    student: object
    generator: object
    meta: dict = field(default_factory=dict)

    @property
    def final_epsilon(self):
        return self.records[-1].epsilon_spent if self.records else 0.0

    @property
    def final_accuracy(self):
        return self.records[-1].accuracy if self.records else math.nan

    def to_csv(self):
        """One row per iteration: iter,L_T,L_S,L_G,acc,eps_spent,gradnorm_runmin."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "L_T", "L_S", "L_G", "acc", "eps_spent", "gradnorm_runmin"])
        for r in self.records:
            writer.writerow([
                r.iteration,
                repr(r.loss_t),
                repr(r.loss_s),
                repr(r.loss_g),
                repr(r.accuracy),
                repr(r.epsilon_spent),
                repr(r.grad_norm_running_min),
            ])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(
            {"meta": self.meta, "records": [asdict(r) for r in self.records]},
            sort_keys=True,
        )


def distillation_loss(teacher_logits, student_logits, tau=1.0, temperature=4.0):
    """Per-example distillation loss and its exact output gradients.

    The teacher's argmax rows become hard pseudo-labels; a
    temperature-softened divergence term (weight tau) keeps the full
    soft signal. Returns (mean loss, per-example gradient rows), where
    row i is d(loss_i)/d(student_logits_i) for that example's own loss.
    """
    t = np.ascontiguousarray(teacher_logits, dtype=np.float64)
    s = np.ascontiguousarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise DimensionError(f"teacher {t.shape} vs student {s.shape} logits")
    k = s.shape[1]
    labels = t.argmax(axis=1)
    onehot = np.eye(k)[labels]
    p_s = softmax_rows(s)
    log_ps = log_softmax_rows(s)
    loss_hard = -(onehot * log_ps).sum(axis=1)
    grads = p_s - onehot
    if tau > 0:
        pt_T = softmax_rows(t / temperature)
        ps_T = softmax_rows(s / temperature)
        log_pt_T = log_softmax_rows(t / temperature)
        log_ps_T = log_softmax_rows(s / temperature)
        kl = (pt_T * (log_pt_T - log_ps_T)).sum(axis=1)
        loss = loss_hard + tau * kl
        grads = grads + (tau / temperature) * (ps_T - pt_T)
    else:
        loss = loss_hard
    return float(loss.mean()), grads


def dp_target(student_logits, sanitized_grad, gamma):
    """y = logits - gamma * g, one shared g per batch or one row per example.

    The result is a fresh constant array: nothing downstream
    differentiates through it.
    """
    s = np.ascontiguousarray(student_logits, dtype=np.float64)
    g = np.ascontiguousarray(sanitized_grad, dtype=np.float64)
    if g.ndim == 1:
        if g.shape[0] != s.shape[1]:
            raise DimensionError("sanitized gradient length must equal class count")
    elif g.shape != s.shape:
        raise DimensionError("per-example sanitized gradients must match logits shape")
    return s - gamma * g


def student_loss(student_logits, y_s):
    """Cross-entropy of the student against softmax(y_s) as a fixed target."""
    targets = softmax_rows(np.ascontiguousarray(y_s, dtype=np.float64))
    return softmax_cross_entropy(student_logits, targets)


@dataclass(frozen=True)
class GeneratorLossResult:
    loss: float
    logit_grad: np.ndarray
    feature_grad: np.ndarray
    confidence_term: float
    balance_term: float
    activation_term: float
    mean_softmax_entropy: float


def generator_loss(student_logits, backbone_features, alpha=1.0, beta=1.0,
                   include_ce=True, feature_norm_sign=-1.0):
    """Confidence + class-balance + activation objective for the generator.

    * confidence: cross-entropy of each row against its own argmax;
    * balance: alpha * sum_c pbar_c log pbar_c over the batch-mean
      softmax pbar (minimal when classes are uniform);
    * activation: beta * sign * mean row norm of the backbone features
      (sign -1 rewards large activations, +1 penalizes them).
    """
    s = np.ascontiguousarray(student_logits, dtype=np.float64)
    f = np.ascontiguousarray(backbone_features, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValidationError("generator loss needs a nonempty logit batch")
    if f.ndim != 2 or f.shape[0] != s.shape[0]:
        raise DimensionError("features must pair with logits row by row")
    b, k = s.shape
    p = softmax_rows(s)
    log_p = log_softmax_rows(s)

    if include_ce:
        onehot = np.eye(k)[s.argmax(axis=1)]
        confidence = float(-(onehot * log_p).sum() / b)
        grad_conf = (p - onehot) / b
    else:
        confidence = 0.0
        grad_conf = np.zeros_like(p)

    pbar = p.mean(axis=0)
    entropy = float(-(pbar * np.log(pbar + 1e-300)).sum())
    balance = alpha * float((pbar * np.log(pbar + 1e-300)).sum())
    v = np.log(pbar + 1e-300) + 1.0
    grad_balance = (alpha / b) * p * (v - (p * v).sum(axis=1, keepdims=True))

    norms = row_norms(f)
    activation = beta * feature_norm_sign * float(norms.mean())
    safe = np.where(norms == 0.0, 1.0, norms)
    grad_features = (beta * feature_norm_sign / b) * (f / safe[:, None])
    grad_features[norms == 0.0] = 0.0

    return GeneratorLossResult(
        loss=confidence + balance + activation,
        logit_grad=grad_conf + grad_balance,
        feature_grad=grad_features,
        confidence_term=confidence,
        balance_term=balance,
        activation_term=activation,
        mean_softmax_entropy=entropy,
    )


def _eval_accuracy(model, eval_set):
    if eval_set is None:
        return math.nan
    if hasattr(eval_set, "inputs"):
        return accuracy(model, eval_set.inputs, eval_set.labels)
    inputs, labels = eval_set
    return accuracy(model, inputs, labels)


def _make_ledger(cfg, n_classes):
    mech = cfg.mechanism
    if mech.noise_scale <= 0:
        if cfg.epsilon_budget is not None:
            raise InfeasibleBudgetError("zero noise cannot meet any finite budget")
        return None
    return PrivacyLedger.for_mechanism(
        mech.norm_bound, n_classes, mech.noise_scale, cfg.accounting
    )


def _plan_iterations(cfg, n_classes):
    """Cap the iteration count so the budget can never be exceeded."""
    if cfg.epsilon_budget is None:
        return cfg.iterations
    allowed = max_iterations(
        cfg.epsilon_budget,
        cfg.delta,
        cfg.mechanism.noise_scale,
        cfg.mechanism.norm_bound,
        n_classes,
        cfg.batch_size,
        mode=cfg.accounting,
    )
    return min(cfg.iterations, allowed)


def _spent(ledger, cfg):
    if ledger is None:
        return math.inf
    return ledger.epsilon(cfg.delta).epsilon


def _check_losses(context, **losses):
    for name, value in losses.items():
        if not math.isfinite(value):
            raise NumericalError(f"{name} became non-finite during {context}")


def _meta(cfg, algorithm, t_run, extra=None):
    mech = cfg.mechanism
    meta = {
        "algorithm": algorithm,
        "mode": mech.mode,
        "C": mech.norm_bound,
        "sigma": mech.noise_scale,
        "stability": mech.stability,
        "gamma": cfg.gamma,
        "gamma_s": cfg.gamma_s,
        "gamma_g": cfg.gamma_g,
        "B": cfg.batch_size,
        "T_planned": cfg.iterations,
        "T_run": t_run,
        "delta": cfg.delta,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "tau": cfg.tau,
        "temperature": cfg.temperature,
        "accounting": cfg.accounting,
        "epsilon_budget": cfg.epsilon_budget,
    }
    if extra:
        meta.update(extra)
    return meta


def _generator_update(generator, gen_trace, student_after, batch, cfg, dd_from_student):
    """Loss on the updated student, then one descent step on the generator.

    The student is frozen here: its parameter gradients are never formed.
    The generator feels d(L_S)/dD (through the pre-update student, whose
    trace defined L_S) plus d(L_G)/dD through the updated one.
    """
    s2_trace = forward(student_after, batch)
    gl = generator_loss(
        s2_trace.logits,
        s2_trace.features,
        cfg.alpha,
        cfg.beta,
        include_ce=cfg.include_generator_ce,
        feature_norm_sign=cfg.feature_norm_sign,
    )
    _, dd_from_gloss = backward(student_after, s2_trace, gl.logit_grad, gl.feature_grad)
    gen_grads, _ = backward(generator, gen_trace, dd_from_student + dd_from_gloss)
    return sgd_step(generator, gen_grads, cfg.gamma_g), gl


def dpdfd_train(teacher, student, generator, cfg, rng, eval_set=None):
    """Single-teacher distillation with one broadcast sanitized gradient
    per batch. Returns the report with the final student and generator."""
    if generator.output_dim != student.input_dim or generator.output_dim != teacher.input_dim:
        raise DimensionError("generator output must feed both teacher and student")
    if teacher.output_dim != student.output_dim:
        raise DimensionError("teacher and student must share the class count")
    if generator.input_dim != cfg.noise_dim:
        raise DimensionError(
            f"generator expects {generator.input_dim}-d noise, config says {cfg.noise_dim}"
        )
    k = student.output_dim
    ledger = _make_ledger(cfg, k)
    t_run = _plan_iterations(cfg, k)
    z_rng, noise_rng = rng.spawn(1), rng.spawn(2)

    records = []
    run_min = math.inf
    for t in range(t_run):
        z = z_rng.normal((cfg.batch_size, cfg.noise_dim))
        gen_trace = forward(generator, z)
        batch = gen_trace.logits
        teacher_logits = forward(teacher, batch).logits
        s_trace = forward(student, batch)

        loss_t, per_example = distillation_loss(
            teacher_logits, s_trace.logits, cfg.tau, cfg.temperature
        )
        _check_losses("distillation", loss_T=loss_t)
        grad_norm = float(row_norms(per_example).mean())
        run_min = min(run_min, grad_norm)

        g_tilde = sanitize_batch(per_example, cfg.mechanism, noise_rng)
        if ledger is not None:
            ledger.charge(cfg.batch_size)
        y_s = dp_target(s_trace.logits, g_tilde, cfg.gamma)

        loss_s, student_grad = student_loss(s_trace.logits, y_s)
        s_grads, dd_ls = backward(student, s_trace, student_grad)
        student = sgd_step(student, s_grads, cfg.gamma_s)

        generator, gl = _generator_update(generator, gen_trace, student, batch, cfg, dd_ls)
        _check_losses("distillation", loss_S=loss_s, loss_G=gl.loss)

        records.append(IterationRecord(
            iteration=t,
            loss_t=loss_t,
            loss_s=loss_s,
            loss_g=gl.loss,
            accuracy=_eval_accuracy(student, eval_set),
            epsilon_spent=_spent(ledger, cfg),
            grad_norm_mean=grad_norm,
            grad_norm_running_min=run_min,
            mean_softmax_entropy=gl.mean_softmax_entropy,
        ))
    return TrainReport(records, student, generator, _meta(cfg, "dpdfd", t_run))


def multi_model_train(ensemble, student, generator, cfg, rng, eval_set=None):
    """Ensemble distillation: per example, one bounded gradient per teacher,
    averaged over the teacher count with an example-local noise draw."""
    teachers = ensemble.teachers
    if generator.output_dim != student.input_dim:
        raise DimensionError("generator output must feed the student")
    for teacher in teachers:
        if teacher.input_dim != student.input_dim or teacher.output_dim != student.output_dim:
            raise DimensionError("every teacher must share the student's dimensions")
    if generator.input_dim != cfg.noise_dim:
        raise DimensionError("generator noise dim does not match the config")
    k = student.output_dim
    ledger = _make_ledger(cfg, k)
    t_run = _plan_iterations(cfg, k)
    z_rng, noise_rng = rng.spawn(1), rng.spawn(2)

    records = []
    run_min = math.inf
    for t in range(t_run):
        z = z_rng.normal((cfg.batch_size, cfg.noise_dim))
        gen_trace = forward(generator, z)
        batch = gen_trace.logits
        s_trace = forward(student, batch)

        losses, stacks = [], []
        for teacher in teachers:
            t_logits = forward(teacher, batch).logits
            loss_j, grads_j = distillation_loss(
                t_logits, s_trace.logits, cfg.tau, cfg.temperature
            )
            losses.append(loss_j)
            stacks.append(grads_j)
        per_teacher = np.stack(stacks, axis=1)  # (B, n_teachers, k)
        loss_t = float(np.mean(losses))
        _check_losses("ensemble distillation", loss_T=loss_t)
        grad_norm = float(row_norms(per_teacher.reshape(-1, k)).mean())
        run_min = min(run_min, grad_norm)

        g_tilde = np.empty((cfg.batch_size, k))
        for i in range(cfg.batch_size):
            g_tilde[i] = sanitize_batch(per_teacher[i], cfg.mechanism, noise_rng)
        if ledger is not None:
            ledger.charge(cfg.batch_size)
        y_s = dp_target(s_trace.logits, g_tilde, cfg.gamma)

        loss_s, student_grad = student_loss(s_trace.logits, y_s)
        s_grads, dd_ls = backward(student, s_trace, student_grad)
        student = sgd_step(student, s_grads, cfg.gamma_s)

        generator, gl = _generator_update(generator, gen_trace, student, batch, cfg, dd_ls)
        _check_losses("ensemble distillation", loss_S=loss_s, loss_G=gl.loss)

        records.append(IterationRecord(
            iteration=t,
            loss_t=loss_t,
            loss_s=loss_s,
            loss_g=gl.loss,
            accuracy=_eval_accuracy(student, eval_set),
            epsilon_spent=_spent(ledger, cfg),
            grad_norm_mean=grad_norm,
            grad_norm_running_min=run_min,
            mean_softmax_entropy=gl.mean_softmax_entropy,
        ))
    meta = _meta(cfg, "multi_model", t_run, {"n_teachers": len(teachers)})
    return TrainReport(records, student, generator, meta)


def direct_dp_train(dataset, model, cfg, rng, eval_set=None):
    """Private training on labeled data: Poisson-sampled batches, the same
    sanitize-then-retarget update, no generator."""
    inputs = np.ascontiguousarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    if inputs.shape[0] == 0:
        raise ValidationError("dataset is empty")
    if inputs.shape[1] != model.input_dim:
        raise DimensionError("dataset width does not match the model")
    k = model.output_dim
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError("label outside the model's class range")
    n_total = inputs.shape[0]
    ledger = _make_ledger(cfg, k)
    t_run = _plan_iterations(cfg, k)
    sample_rng, noise_rng = rng.spawn(3), rng.spawn(2)
    rate = min(1.0, cfg.batch_size / n_total)

    records = []
    run_min = math.inf
    eye = np.eye(k)
    for t in range(t_run):
        mask = sample_rng.uniform(n_total) < rate
        if ledger is not None:
            ledger.charge(cfg.batch_size)
        if not mask.any():
            continue  # empty Poisson draw: nothing to release this round
        xb, yb = inputs[mask], labels[mask]
        trace = forward(model, xb)
        p = softmax_rows(trace.logits)
        onehot = eye[yb]
        per_example = p - onehot
        loss_t = float(-(onehot * log_softmax_rows(trace.logits)).sum() / len(yb))
        _check_losses("private training", loss=loss_t)
        grad_norm = float(row_norms(per_example).mean())
        run_min = min(run_min, grad_norm)

        g_tilde = sanitize_batch(per_example, cfg.mechanism, noise_rng)
        new_outputs = dp_target(trace.logits, g_tilde, cfg.gamma)
        loss_s, out_grad = student_loss(trace.logits, new_outputs)
        grads, _ = backward(model, trace, out_grad)
        model = sgd_step(model, grads, cfg.gamma_s)
        _check_losses("private training", loss_S=loss_s)

        records.append(IterationRecord(
            iteration=t,
            loss_t=loss_t,
            loss_s=loss_s,
            loss_g=0.0,
            accuracy=_eval_accuracy(model, eval_set),
            epsilon_spent=_spent(ledger, cfg),
            grad_norm_mean=grad_norm,
            grad_norm_running_min=run_min,
            mean_softmax_entropy=math.nan,
        ))
    return TrainReport(records, model, None, _meta(cfg, "direct_dp", t_run))


@dataclass
class ConvergenceSummary:
    """Running minimum of the gradient-norm proxy vs. the theoretical shape."""

    running_min: np.ndarray
    envelope: np.ndarray
    stalled: bool


def convergence_monitor(report, kappa=1.0, loss_floor=0.0):
    """Summarize how the pre-noise gradient norms decayed.

    The envelope is the step/noise bound
    sqrt(2*(L0 - floor)/(t*gamma*C) + 2*kappa*gamma*C*(1 + sigma^2 * d))
    evaluated per iteration with d = class count; it is a shape for
    plotting, not an asserted bound. The stalled flag raises when the
    running minimum fails to improve over the final half of the run.
    """
    if not report.records:
        raise ValidationError("cannot monitor an empty report")
    norms = np.array([r.grad_norm_mean for r in report.records])
    running_min = np.minimum.accumulate(norms)
    gamma = report.meta["gamma"]
    c = report.meta["C"]
    sigma = report.meta["sigma"]
    d = report.student.output_dim
    l0 = max(report.records[0].loss_t - loss_floor, 0.0)
    steps = np.arange(1, len(norms) + 1, dtype=np.float64)
    envelope = np.sqrt(
        2.0 * l0 / (steps * gamma * c) + 2.0 * kappa * gamma * c * (1.0 + sigma * sigma * d)
    )
    mid = len(norms) // 2
    stalled = bool(running_min[-1] >= running_min[mid])
    return ConvergenceSummary(running_min, envelope, stalled)
