// assume(true)
Max = A[0];
for (i = 0; i < N; i++) {
  if (Max < A[i]) {
    Max = A[i];
  }
}
// assert(exists i in [0, N) :: Max == A[i])
