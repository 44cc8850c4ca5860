for (i = 0; i < N; i++) {
  B[i] = A[i];
}
// assert(forall i in [0, N) :: B[i] == A[i])
