// assume(forall i in [0, N) :: A[i] > 0)
sum = 0;
for (i = 0; i < N; i++) {
  sum = sum + A[i];
}
for (j = 0; j < N; j++) {
  B[j] = A[j] / sum;
}
// assert(sum > 0 && (exists i in [0, N) :: B[i] >= 1 / N) && (exists j in [0, N) :: B[j] <= 1 / N))
